//! Large-scale geological metaparameters: prior boxes, the Gaussian-mixture
//! impedance prior, and the correlation-based misfit and likelihood.
//!
//! A metaparameter vector holds the variogram ranges (and optionally a second
//! horizontal range and the azimuth) plus, for each of `k` facies, the mode
//! mean, standard deviation and proportion. Exactly `k - 1` proportions are
//! free; the remaining one is derived so they sum to one.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::dss::TargetDistribution;
use crate::error::{Error, Result};
use crate::forward::trace_ccs;
use crate::grid::Volume;
use crate::variogram::{VariogramKind, VariogramModel};

pub const DEFAULT_TARGET_POINTS: usize = 4096;
pub const DEFAULT_SIGMA2: f64 = 0.25;

pub const RANGE_H: &str = "range_h_m";
pub const RANGE_H2: &str = "range_h2_m";
pub const RANGE_V: &str = "range_v_ms";
pub const AZIMUTH: &str = "azimuth_deg";

pub fn mu_key(mode: usize) -> String {
    format!("mu{mode}")
}

pub fn sigma_key(mode: usize) -> String {
    format!("sigma{mode}")
}

pub fn prop_key(mode: usize) -> String {
    format!("prop{mode}")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GmmMode {
    pub mu: f64,
    pub sigma: f64,
    pub weight: f64,
}

/// k-mode Gaussian mixture, one mode per facies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmSpec {
    pub modes: Vec<GmmMode>,
}

impl GmmSpec {
    pub fn new(modes: Vec<GmmMode>) -> Result<Self> {
        let g = GmmSpec { modes };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.modes.is_empty() {
            return Err(Error::Domain("mixture needs at least one mode".into()));
        }
        for (i, m) in self.modes.iter().enumerate() {
            if !(m.sigma.is_finite() && m.sigma > 0.0) || !m.mu.is_finite() {
                return Err(Error::Domain(format!("mode {} has invalid mu/sigma", i + 1)));
            }
            if !(0.0..=1.0).contains(&m.weight) {
                return Err(Error::Domain(format!("mode {} weight {} outside [0, 1]", i + 1, m.weight)));
            }
        }
        let total: f64 = self.modes.iter().map(|m| m.weight).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Domain(format!("mixture weights sum to {total}, not 1")));
        }
        Ok(())
    }

    pub fn k(&self) -> usize {
        self.modes.len()
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let n = Normal::new(0.0, 1.0).unwrap();
        self.modes
            .iter()
            .map(|m| m.weight * n.cdf((x - m.mu) / m.sigma))
            .sum()
    }

    pub fn pdf(&self, x: f64) -> f64 {
        self.modes
            .iter()
            .map(|m| {
                let z = (x - m.mu) / m.sigma;
                m.weight * (-0.5 * z * z).exp() / (m.sigma * (2.0 * std::f64::consts::PI).sqrt())
            })
            .sum()
    }
}

/// Discretizes the mixture cdf on `[min(mu - 4 sigma), max(mu + 4 sigma)]`,
/// renormalizing the truncated tails.
pub fn build_target(g: &GmmSpec, n_points: usize) -> Result<TargetDistribution> {
    g.validate()?;
    if n_points < 64 {
        return Err(Error::Domain(format!("target needs at least 64 points, got {n_points}")));
    }
    let lo = g.modes.iter().map(|m| m.mu - 4.0 * m.sigma).fold(f64::INFINITY, f64::min);
    let hi = g.modes.iter().map(|m| m.mu + 4.0 * m.sigma).fold(f64::NEG_INFINITY, f64::max);
    let support: Vec<f64> = (0..n_points)
        .map(|i| lo + (hi - lo) * i as f64 / (n_points - 1) as f64)
        .collect();
    let (f_lo, f_hi) = (g.cdf(lo), g.cdf(hi));
    let mut cdf: Vec<f64> = support.iter().map(|&x| (g.cdf(x) - f_lo) / (f_hi - f_lo)).collect();
    cdf[0] = 0.0;
    *cdf.last_mut().unwrap() = 1.0;
    for i in 1..cdf.len() {
        if cdf[i] < cdf[i - 1] {
            cdf[i] = cdf[i - 1];
        }
    }
    TargetDistribution::new(support, cdf)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorParam {
    pub name: String,
    pub lo: f64,
    pub hi: f64,
}

/// Independent uniform priors over named parameters.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PriorBox {
    pub params: Vec<PriorParam>,
}

impl PriorBox {
    pub fn new(params: Vec<PriorParam>) -> Result<Self> {
        let b = PriorBox { params };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        for (i, p) in self.params.iter().enumerate() {
            if !(p.lo.is_finite() && p.hi.is_finite() && p.lo < p.hi) {
                return Err(Error::Domain(format!(
                    "prior {} needs lo < hi, got [{}, {}]",
                    p.name, p.lo, p.hi
                )));
            }
            if self.params[..i].iter().any(|q| q.name == p.name) {
                return Err(Error::Domain(format!("prior {} listed twice", p.name)));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.params.len()
    }

    pub fn names(&self) -> Vec<&str> {
        self.params.iter().map(|p| p.name.as_str()).collect()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn contains(&self, v: &MetaVector) -> bool {
        v.values.len() == self.dim()
            && self
                .params
                .iter()
                .zip(&v.values)
                .all(|(p, &x)| x >= p.lo && x <= p.hi)
    }

    pub fn lower(&self) -> MetaVector {
        MetaVector::new(self.params.iter().map(|p| p.lo).collect())
    }

    pub fn upper(&self) -> MetaVector {
        MetaVector::new(self.params.iter().map(|p| p.hi).collect())
    }

    pub fn midpoint(&self) -> MetaVector {
        MetaVector::new(self.params.iter().map(|p| 0.5 * (p.lo + p.hi)).collect())
    }

    /// Maps a point of the unit box into parameter units.
    pub fn denormalize(&self, u: &[f64]) -> MetaVector {
        MetaVector::new(
            self.params
                .iter()
                .zip(u)
                .map(|(p, &x)| p.lo + x * (p.hi - p.lo))
                .collect(),
        )
    }

    pub fn normalize(&self, v: &MetaVector) -> Vec<f64> {
        self.params
            .iter()
            .zip(&v.values)
            .map(|(p, &x)| (x - p.lo) / (p.hi - p.lo))
            .collect()
    }
}

/// One point of the metaparameter space, aligned with a [`PriorBox`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaVector {
    pub values: Vec<f64>,
}

impl MetaVector {
    pub fn new(values: Vec<f64>) -> Self {
        MetaVector { values }
    }
}

/// Interpretation of a prior box as variogram + mixture parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaSpace {
    pub prior: PriorBox,
    pub kind: VariogramKind,
    pub n_target_points: usize,
    k: usize,
    range_h: usize,
    range_h2: Option<usize>,
    range_v: usize,
    azimuth: Option<usize>,
    mus: Vec<usize>,
    sigmas: Vec<usize>,
    /// Per mode: index of its free proportion, or `None` for the derived one.
    props: Vec<Option<usize>>,
}

impl MetaSpace {
    pub fn new(prior: PriorBox, kind: VariogramKind) -> Result<Self> {
        prior.validate()?;
        let need = |name: &str| {
            prior
                .index_of(name)
                .ok_or_else(|| Error::Domain(format!("prior box is missing `{name}`")))
        };
        let range_h = need(RANGE_H)?;
        let range_v = need(RANGE_V)?;
        let range_h2 = prior.index_of(RANGE_H2);
        let azimuth = prior.index_of(AZIMUTH);
        let mut k = 0;
        while prior.index_of(&mu_key(k + 1)).is_some() {
            k += 1;
        }
        if k == 0 {
            return Err(Error::Domain("prior box defines no mixture modes (mu1, ...)".into()));
        }
        let mus = (1..=k).map(|m| need(&mu_key(m))).collect::<Result<Vec<_>>>()?;
        let sigmas = (1..=k).map(|m| need(&sigma_key(m))).collect::<Result<Vec<_>>>()?;
        let props: Vec<Option<usize>> = (1..=k).map(|m| prior.index_of(&prop_key(m))).collect();
        let free = props.iter().filter(|p| p.is_some()).count();
        if free != k - 1 {
            return Err(Error::Domain(format!(
                "{k} modes need exactly {} free proportions, found {free}",
                k - 1
            )));
        }
        let known = [RANGE_H, RANGE_H2, RANGE_V, AZIMUTH];
        for p in &prior.params {
            let ok = known.contains(&p.name.as_str())
                || (1..=k).any(|m| p.name == mu_key(m) || p.name == sigma_key(m) || p.name == prop_key(m));
            if !ok {
                return Err(Error::Domain(format!("unknown prior parameter `{}`", p.name)));
            }
        }
        for &i in &sigmas {
            if prior.params[i].lo <= 0.0 {
                return Err(Error::Domain(format!("{} must be bounded away from 0", prior.params[i].name)));
            }
        }
        Ok(MetaSpace {
            prior,
            kind,
            n_target_points: DEFAULT_TARGET_POINTS,
            k,
            range_h,
            range_h2,
            range_v,
            azimuth,
            mus,
            sigmas,
            props,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn gmm(&self, v: &MetaVector) -> Result<GmmSpec> {
        let x = &v.values;
        let free: f64 = self.props.iter().flatten().map(|&i| x[i]).sum();
        let derived = 1.0 - free;
        if !(-1e-12..=1.0 + 1e-12).contains(&derived) {
            return Err(Error::Domain(format!("derived proportion {derived} outside [0, 1]")));
        }
        GmmSpec::new(
            (0..self.k)
                .map(|m| GmmMode {
                    mu: x[self.mus[m]],
                    sigma: x[self.sigmas[m]],
                    weight: self.props[m].map_or(derived.clamp(0.0, 1.0), |i| x[i]),
                })
                .collect(),
        )
    }
}

/// Variogram, target distribution and mixture built from one metaparameter
/// vector.
#[derive(Debug, Clone)]
pub struct Materialized {
    pub model: VariogramModel,
    pub target: TargetDistribution,
    pub gmm: GmmSpec,
}

/// Deterministic construction of the simulation inputs for `v`. The variogram
/// sill is the variance of the target so kriging variances live in the same
/// units as the local distributions.
pub fn materialize(space: &MetaSpace, v: &MetaVector) -> Result<Materialized> {
    if v.values.len() != space.prior.dim() {
        return Err(Error::Domain(format!(
            "vector has {} components, prior has {}",
            v.values.len(),
            space.prior.dim()
        )));
    }
    if !space.prior.contains(v) {
        let (name, x) = space
            .prior
            .params
            .iter()
            .zip(&v.values)
            .find(|(p, &x)| !(x >= p.lo && x <= p.hi))
            .map(|(p, &x)| (p.name.clone(), x))
            .unwrap();
        return Err(Error::Domain(format!("{name} = {x} outside its prior box")));
    }
    let x = &v.values;
    let gmm = space.gmm(v)?;
    let target = build_target(&gmm, space.n_target_points)?;
    let a1 = x[space.range_h];
    let a2 = space.range_h2.map_or(a1, |i| x[i]);
    let az = space.azimuth.map_or(0.0, |i| x[i]);
    let model = VariogramModel::new(space.kind, a1, a2, x[space.range_v], az, target.variance(), 0.0)?;
    Ok(Materialized { model, target, gmm })
}

/// Correlation misfit summed over traces.
#[derive(Debug, Clone, PartialEq)]
pub struct MisfitScore {
    pub m: f64,
    pub trace_cc: Vec<f64>,
}

/// `M = sum_i (1 - CC_i) / (2 sigma2)` over traces.
pub fn misfit(observed: &Volume, synthetic: &Volume, sigma2: f64) -> Result<MisfitScore> {
    if !(sigma2.is_finite() && sigma2 > 0.0) {
        return Err(Error::Domain(format!("sigma2 must be positive, got {sigma2}")));
    }
    let trace_cc = trace_ccs(observed, synthetic)?;
    Ok(MisfitScore {
        m: misfit_from_ccs(&trace_cc, sigma2),
        trace_cc,
    })
}

pub fn misfit_from_ccs(ccs: &[f64], sigma2: f64) -> f64 {
    ccs.iter().map(|cc| (1.0 - cc) / (2.0 * sigma2)).sum()
}

/// `exp(-M)`, held as its logarithm.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Likelihood {
    pub log: f64,
}

impl Likelihood {
    pub fn value(&self) -> f64 {
        self.log.exp()
    }
}

pub fn likelihood(m: f64) -> Likelihood {
    Likelihood { log: -m }
}
