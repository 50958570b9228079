//! Posterior approximation from the sampler history.
//!
//! Each evaluated model owns its Voronoi cell in the unit box, with the
//! likelihood held constant inside the cell. A Gibbs sampler sweeps the axes,
//! drawing each coordinate from the exact piecewise-constant conditional, and
//! the cell visited after every sweep counts as one resample.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::Rng as _;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{Volume, WellSet};
use crate::metaspace::PriorBox;
use crate::pso::SampledModel;
use crate::rng::{derive_seed2, rng_from, Rng};

pub const DEFAULT_WALKERS: usize = 8;
pub const DEFAULT_RESAMPLES: usize = 10_000;
pub const DEFAULT_BURN_IN: usize = 10;

/// Sampled models with positions normalized to the prior's unit box.
#[derive(Debug, Clone)]
pub struct ProxySurface {
    pub prior: PriorBox,
    pub ids: Vec<usize>,
    pub points: Vec<Vec<f64>>,
    pub m: Vec<f64>,
}

impl ProxySurface {
    pub fn new(prior: &PriorBox, models: &[SampledModel]) -> Result<Self> {
        if models.is_empty() {
            return Err(Error::Domain("proxy surface needs at least one model".into()));
        }
        let mut ids = Vec::with_capacity(models.len());
        let mut points = Vec::with_capacity(models.len());
        let mut m = Vec::with_capacity(models.len());
        for s in models {
            if s.position.values.len() != prior.dim() {
                return Err(Error::Consistency(format!(
                    "model {} has {} parameters, prior has {}",
                    s.id,
                    s.position.values.len(),
                    prior.dim()
                )));
            }
            if !s.m.is_finite() {
                return Err(Error::Domain(format!("model {} has non-finite misfit", s.id)));
            }
            if ids.contains(&s.id) {
                return Err(Error::Consistency(format!("model id {} appears twice", s.id)));
            }
            ids.push(s.id);
            points.push(prior.normalize(&s.position));
            m.push(s.m);
        }
        Ok(ProxySurface {
            prior: prior.clone(),
            ids,
            points,
            m,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.prior.dim()
    }

    /// Index of the model nearest to `x`; ties go to the lowest index.
    pub fn nearest(&self, x: &[f64]) -> usize {
        let mut best = (f64::INFINITY, 0);
        for (j, p) in self.points.iter().enumerate() {
            let d: f64 = p.iter().zip(x).map(|(a, b)| (a - b).powi(2)).sum();
            if d < best.0 {
                best = (d, j);
            }
        }
        best.1
    }
}

/// One piece of a 1-D slice through the Voronoi diagram.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SliceInterval {
    pub lo: f64,
    pub hi: f64,
    pub owner: usize,
}

/// Partitions `[0, 1]` along the axis with the given intercepts: model `j`
/// owns the points `t` where `-2 t c[j] + c[j]^2 + p[j]` is smallest, `c`
/// being its coordinate on the axis and `p` its squared distance off-axis.
pub fn slice_intervals(c: &[f64], p: &[f64]) -> Vec<SliceInterval> {
    let line = |j: usize, t: f64| -2.0 * t * c[j] + c[j] * c[j] + p[j];
    // Owner at t = 0: lowest value, then steepest descent, then lowest index.
    let mut cur = 0;
    for j in 1..c.len() {
        let (a, b) = (line(j, 0.0), line(cur, 0.0));
        if a < b || (a == b && c[j] > c[cur]) {
            cur = j;
        }
    }
    let mut out = Vec::new();
    let mut t = 0.0;
    loop {
        // Among lines descending faster than the current owner, the first
        // crossing after t takes over.
        let mut next: Option<(f64, usize)> = None;
        for j in 0..c.len() {
            if c[j] <= c[cur] {
                continue;
            }
            let tc = (c[j] * c[j] + p[j] - c[cur] * c[cur] - p[cur]) / (2.0 * (c[j] - c[cur]));
            if tc < t || tc >= 1.0 {
                continue;
            }
            let take = match next {
                None => true,
                Some((tn, jn)) => tc < tn || (tc == tn && c[j] > c[jn]),
            };
            if take {
                next = Some((tc, j));
            }
        }
        match next {
            Some((tc, j)) => {
                if tc > t {
                    out.push(SliceInterval {
                        lo: t,
                        hi: tc,
                        owner: cur,
                    });
                }
                t = tc;
                cur = j;
            }
            None => {
                out.push(SliceInterval {
                    lo: t,
                    hi: 1.0,
                    owner: cur,
                });
                return out;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NabConfig {
    pub n_walkers: usize,
    /// Recorded sweeps per walker.
    pub n_steps: usize,
    /// Unrecorded sweeps before recording starts.
    pub burn_in: usize,
    pub seed: u64,
}

impl Default for NabConfig {
    fn default() -> Self {
        NabConfig {
            n_walkers: DEFAULT_WALKERS,
            n_steps: DEFAULT_RESAMPLES.div_ceil(DEFAULT_WALKERS),
            burn_in: DEFAULT_BURN_IN,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorEnsemble {
    /// Resampled model ids in walker order.
    pub resamples: Vec<usize>,
    /// Resample counts per model id, including models never visited.
    pub counts: BTreeMap<usize, usize>,
    pub map_id: usize,
}

impl PosteriorEnsemble {
    pub fn from_resamples(all_ids: &[usize], resamples: Vec<usize>) -> Result<Self> {
        if resamples.is_empty() {
            return Err(Error::Domain("posterior ensemble needs at least one resample".into()));
        }
        let mut counts: BTreeMap<usize, usize> = all_ids.iter().map(|&id| (id, 0)).collect();
        for id in &resamples {
            *counts
                .get_mut(id)
                .ok_or_else(|| Error::Consistency(format!("resample {id} is not a known model")))? += 1;
        }
        let map_id = counts
            .iter()
            .fold((0usize, usize::MAX), |best, (&id, &c)| {
                if best.1 == usize::MAX || c > best.0 {
                    (c, id)
                } else {
                    best
                }
            })
            .1;
        Ok(PosteriorEnsemble {
            resamples,
            counts,
            map_id,
        })
    }

    pub fn total(&self) -> usize {
        self.resamples.len()
    }

    pub fn weight(&self, id: usize) -> f64 {
        self.counts.get(&id).copied().unwrap_or(0) as f64 / self.total() as f64
    }

    /// `(id, weight)` for every model, in id order.
    pub fn weights(&self) -> Vec<(usize, f64)> {
        self.counts.keys().map(|&id| (id, self.weight(id))).collect()
    }

    pub fn write_weights(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = String::from("id,weight\n");
        for (id, w) in self.weights() {
            out.push_str(&format!("{id},{w}\n"));
        }
        write_text(path.as_ref(), &out)
    }
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(text.as_bytes()))
        .map_err(|e| Error::io(path, e))
}

fn walk(surface: &ProxySurface, cfg: &NabConfig, rng: &mut Rng) -> Vec<usize> {
    let n = surface.len();
    let dim = surface.dim();
    let m_min = surface.m.iter().cloned().fold(f64::INFINITY, f64::min);
    let lik: Vec<f64> = surface.m.iter().map(|m| (-(m - m_min)).exp()).collect();
    let mut x: Vec<f64> = (0..dim).map(|_| rng.random::<f64>()).collect();
    // Squared distance from x to every model.
    let mut dist: Vec<f64> = surface
        .points
        .iter()
        .map(|p| p.iter().zip(&x).map(|(a, b)| (a - b).powi(2)).sum())
        .collect();
    let mut c = vec![0.0; n];
    let mut off = vec![0.0; n];
    let mut weights = Vec::new();
    let mut owner = surface.nearest(&x);
    let mut out = Vec::with_capacity(cfg.n_steps);
    for sweep in 0..cfg.burn_in + cfg.n_steps {
        for d in 0..dim {
            for j in 0..n {
                c[j] = surface.points[j][d];
                off[j] = (dist[j] - (c[j] - x[d]).powi(2)).max(0.0);
            }
            let ivs = slice_intervals(&c, &off);
            weights.clear();
            weights.extend(ivs.iter().map(|iv| (iv.hi - iv.lo) * lik[iv.owner]));
            let total: f64 = weights.iter().sum();
            let mut u = rng.random::<f64>() * total;
            let mut pick = ivs.len() - 1;
            for (i, w) in weights.iter().enumerate() {
                if u < *w {
                    pick = i;
                    break;
                }
                u -= w;
            }
            let iv = ivs[pick];
            let t = iv.lo + rng.random::<f64>() * (iv.hi - iv.lo);
            x[d] = t;
            owner = iv.owner;
            for j in 0..n {
                dist[j] = off[j] + (c[j] - t).powi(2);
            }
        }
        if sweep >= cfg.burn_in {
            out.push(surface.ids[owner]);
        }
    }
    out
}

/// Gibbs resampling of the proxy posterior `exp(-M)` over the Voronoi cells.
pub fn gibbs_resample(surface: &ProxySurface, cfg: &NabConfig) -> Result<PosteriorEnsemble> {
    if cfg.n_walkers == 0 || cfg.n_steps == 0 {
        return Err(Error::Domain("NAB needs at least one walker and one step".into()));
    }
    let chains: Vec<Vec<usize>> = (0..cfg.n_walkers)
        .into_par_iter()
        .map(|w| walk(surface, cfg, &mut rng_from(derive_seed2(cfg.seed, w as u64, 3))))
        .collect();
    PosteriorEnsemble::from_resamples(&surface.ids, chains.concat())
}

/// Probability mass per equal-width bin over a parameter's prior range.
#[derive(Debug, Clone, PartialEq)]
pub struct Marginal {
    pub name: String,
    pub edges: Vec<f64>,
    pub mass: Vec<f64>,
}

impl Marginal {
    pub fn density(&self) -> Vec<f64> {
        self.mass
            .iter()
            .zip(self.edges.windows(2))
            .map(|(m, e)| m / (e[1] - e[0]))
            .collect()
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = String::from("lo,hi,mass,density\n");
        for (i, d) in self.density().iter().enumerate() {
            out.push_str(&format!("{},{},{},{}\n", self.edges[i], self.edges[i + 1], self.mass[i], d));
        }
        write_text(path.as_ref(), &out)
    }
}

/// Weighted histogram of the resampled model positions along `dim`.
pub fn marginal_ppd(ens: &PosteriorEnsemble, surface: &ProxySurface, dim: usize, n_bins: usize) -> Result<Marginal> {
    let p = surface
        .prior
        .params
        .get(dim)
        .ok_or_else(|| Error::Index(format!("parameter {dim} of {}", surface.dim())))?;
    if n_bins == 0 {
        return Err(Error::Domain("marginal needs at least one bin".into()));
    }
    let edges: Vec<f64> = (0..=n_bins)
        .map(|b| p.lo + (p.hi - p.lo) * b as f64 / n_bins as f64)
        .collect();
    let mut mass = vec![0.0; n_bins];
    for (j, &id) in surface.ids.iter().enumerate() {
        let w = ens.weight(id);
        if w > 0.0 {
            let b = ((surface.points[j][dim] * n_bins as f64) as usize).min(n_bins - 1);
            mass[b] += w;
        }
    }
    Ok(Marginal {
        name: p.name.clone(),
        edges,
        mass,
    })
}

/// Smallest value whose cumulative weight reaches `p` of the total.
/// `pairs` must be sorted by value. The threshold carries a relative slack
/// of 1e-12 so that products like 0.1 * 30 = 3.0000000000000004 still
/// match an exact cumulative count.
pub fn lower_weighted_quantile(pairs: &[(f64, f64)], p: f64) -> f64 {
    let total: f64 = pairs.iter().map(|(_, w)| w).sum();
    let threshold = p * total * (1.0 - 1e-12);
    let mut cum = 0.0;
    for &(v, w) in pairs {
        cum += w;
        if cum >= threshold {
            return v;
        }
    }
    pairs.last().map_or(f64::NAN, |(v, _)| *v)
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantileMaps {
    pub p10: Volume,
    pub p50: Volume,
    pub p90: Volume,
}

impl QuantileMaps {
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        crate::grid::write_volume(dir.join("p10.gsuq"), &self.p10)?;
        crate::grid::write_volume(dir.join("p50.gsuq"), &self.p50)?;
        crate::grid::write_volume(dir.join("p90.gsuq"), &self.p90)
    }
}

/// Per-cell weighted quantiles of the models' volumes at probabilities
/// 0.1, 0.5 and 0.9.
pub fn quantile_maps(ens: &PosteriorEnsemble, volumes: &BTreeMap<usize, Volume>) -> Result<QuantileMaps> {
    let mut members: Vec<(&Volume, f64)> = Vec::new();
    for (&id, &count) in &ens.counts {
        if count == 0 {
            continue;
        }
        let v = volumes
            .get(&id)
            .ok_or_else(|| Error::Consistency(format!("no volume for resampled model {id}")))?;
        members.push((v, count as f64));
    }
    let grid = *members[0].0.grid();
    if members.iter().any(|(v, _)| v.grid() != &grid) {
        return Err(Error::Consistency("model volumes differ in grid".into()));
    }
    let n = grid.n_cells();
    let cells: Vec<[f32; 3]> = (0..n)
        .into_par_iter()
        .map_init(Vec::new, |pairs: &mut Vec<(f64, f64)>, i| {
            pairs.clear();
            pairs.extend(members.iter().map(|(v, w)| (v.values()[i] as f64, *w)));
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
            [0.1, 0.5, 0.9].map(|p| lower_weighted_quantile(pairs, p) as f32)
        })
        .collect();
    let pick = |q: usize| Volume::new(grid, cells.iter().map(|c| c[q]).collect());
    Ok(QuantileMaps {
        p10: pick(0)?,
        p50: pick(1)?,
        p90: pick(2)?,
    })
}

/// Fraction of well samples with `lo <= s <= hi` at the sample's cell.
pub fn coverage_between(lo: &Volume, hi: &Volume, wells: &WellSet) -> f64 {
    let grid = *lo.grid();
    let mut n = 0usize;
    let mut inside = 0usize;
    for (idx, ip) in wells.cells(&grid) {
        let s = ip as f32;
        n += 1;
        if lo.values()[idx] <= s && s <= hi.values()[idx] {
            inside += 1;
        }
    }
    if n == 0 {
        log::warn!("coverage requested for an empty well set; reporting 0");
        return 0.0;
    }
    inside as f64 / n as f64
}

/// Blind-well coverage of the P10-P90 envelope.
pub fn coverage(maps: &QuantileMaps, blind: &WellSet) -> f64 {
    coverage_between(&maps.p10, &maps.p90, blind)
}
