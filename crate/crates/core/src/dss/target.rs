//! Global target distribution and the DSS local-distribution sampler.
//!
//! The local distribution at a node is the target distribution seen through
//! a Gaussian window in normal-score space: `z = F^-1(Phi(c + s * g))` with
//! `g ~ N(0, 1)`. The spread `s` is the normal-score conditional deviation
//! equivalent to the kriging variance, found through the correlation map of
//! the normal-score transform. The centre `c` is then chosen so the local
//! mean equals the kriging mean, using a precomputed moment table.
//!
//! Matching the local variance directly instead reproduces the variogram
//! but piles values into the gaps of multimodal targets; the mapped spread
//! keeps both close.

use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::kriging::KrigingResult;

/// Discretized cdf with monotone linear interpolation between support points.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetDistribution {
    support: Vec<f64>,
    cdf: Vec<f64>,
    mean: f64,
    variance: f64,
}

impl TargetDistribution {
    /// `support` strictly increasing, `cdf` non-decreasing in [0, 1] ending at 1.
    pub fn new(support: Vec<f64>, cdf: Vec<f64>) -> Result<Self> {
        if support.is_empty() || support.len() != cdf.len() {
            return Err(Error::Domain(format!(
                "support ({}) and cdf ({}) must be non-empty and of equal length",
                support.len(),
                cdf.len()
            )));
        }
        if support.iter().any(|x| !x.is_finite()) {
            return Err(Error::Domain("target support must be finite".into()));
        }
        if support.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Domain("target support must be strictly increasing".into()));
        }
        if cdf.windows(2).any(|w| w[1] < w[0]) || cdf[0] < 0.0 || (cdf[cdf.len() - 1] - 1.0).abs() > 1e-12 {
            return Err(Error::Domain("target cdf must be non-decreasing from >= 0 to 1".into()));
        }
        let mut cdf = cdf;
        *cdf.last_mut().unwrap() = 1.0;
        let (mean, variance) = moments(&support, &cdf);
        Ok(TargetDistribution {
            support,
            cdf,
            mean,
            variance,
        })
    }

    /// Empirical distribution of a sample set: the i-th smallest distinct
    /// value gets cdf = (count of values <= it) / n.
    pub fn from_samples(samples: &[f64]) -> Result<Self> {
        let mut v: Vec<f64> = samples.iter().copied().filter(|x| x.is_finite()).collect();
        if v.is_empty() {
            return Err(Error::Domain("cannot build a target from zero samples".into()));
        }
        v.sort_by(f64::total_cmp);
        let n = v.len() as f64;
        let mut support = Vec::new();
        let mut cdf = Vec::new();
        for (idx, x) in v.iter().enumerate() {
            if support.last() == Some(x) {
                *cdf.last_mut().unwrap() = (idx + 1) as f64 / n;
            } else {
                support.push(*x);
                cdf.push((idx + 1) as f64 / n);
            }
        }
        Self::new(support, cdf)
    }

    pub fn support(&self) -> &[f64] {
        &self.support
    }

    pub fn cdf_values(&self) -> &[f64] {
        &self.cdf
    }

    pub fn min(&self) -> f64 {
        self.support[0]
    }

    pub fn max(&self) -> f64 {
        self.support[self.support.len() - 1]
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }

    /// F(x) by linear interpolation; 0 below the support, 1 above.
    pub fn cdf(&self, x: f64) -> f64 {
        let s = &self.support;
        if x < s[0] {
            return 0.0;
        }
        if x >= s[s.len() - 1] {
            return 1.0;
        }
        let hi = s.partition_point(|&v| v <= x);
        let lo = hi - 1;
        let f = (x - s[lo]) / (s[hi] - s[lo]);
        self.cdf[lo] + f * (self.cdf[hi] - self.cdf[lo])
    }

    /// F^-1(p): the smallest interpolated value whose cdf reaches p.
    pub fn quantile(&self, p: f64) -> f64 {
        let c = &self.cdf;
        if p <= c[0] {
            return self.support[0];
        }
        if p >= 1.0 {
            return self.max();
        }
        let hi = c.partition_point(|&v| v < p);
        let lo = hi - 1;
        let span = c[hi] - c[lo];
        let f = if span > 0.0 { (p - c[lo]) / span } else { 0.0 };
        self.support[lo] + f * (self.support[hi] - self.support[lo])
    }

    pub fn clamp(&self, x: f64) -> f64 {
        x.clamp(self.min(), self.max())
    }
}

/// Mean and variance of the piecewise-linear cdf: an atom of mass cdf[0] at
/// the first support point plus uniform mass on each segment.
fn moments(support: &[f64], cdf: &[f64]) -> (f64, f64) {
    let mut m1 = cdf[0] * support[0];
    let mut m2 = cdf[0] * support[0] * support[0];
    for i in 0..support.len() - 1 {
        let w = cdf[i + 1] - cdf[i];
        let (a, b) = (support[i], support[i + 1]);
        m1 += w * 0.5 * (a + b);
        m2 += w * (a * a + a * b + b * b) / 3.0;
    }
    (m1, (m2 - m1 * m1).max(0.0))
}

pub(crate) fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

const C_MIN: f64 = -4.0;
const C_STEP: f64 = 0.05;
const N_C: usize = 161;
const S_STEP: f64 = 0.05;
const N_S: usize = 21;
const N_QUAD: usize = 256;
const G_LIM: f64 = 8.0;
const G_PER_UNIT: f64 = 64.0;

/// Samples DSS local distributions for one target.
#[derive(Debug, Clone)]
pub struct LocalSampler {
    target: TargetDistribution,
    normal: Normal,
    /// Row-major [s][c] local means.
    means: Vec<f64>,
    /// Data-space correlation as a function of normal-score correlation,
    /// tabulated on `[0, 1]`.
    rho_map: Vec<f64>,
}

/// Outcome of one local draw.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalDraw {
    pub value: f64,
    /// The kriging mean lay outside the target support and was clamped.
    pub clamped: bool,
}

impl LocalSampler {
    pub fn new(target: TargetDistribution) -> Self {
        let normal = std_normal();
        // Normal-score quantile table Q(g) = F^-1(Phi(g)) for fast moments.
        let n_g = (2.0 * G_LIM * G_PER_UNIT) as usize + 1;
        let qtab: Vec<f64> = (0..n_g)
            .map(|i| target.quantile(normal.cdf(-G_LIM + i as f64 / G_PER_UNIT)))
            .collect();
        let q_of = |g: f64| {
            let x = ((g + G_LIM) * G_PER_UNIT).clamp(0.0, (n_g - 1) as f64);
            let i = (x as usize).min(n_g - 2);
            let f = x - i as f64;
            qtab[i] + f * (qtab[i + 1] - qtab[i])
        };
        let nodes: Vec<f64> = (0..N_QUAD)
            .map(|m| normal.inverse_cdf((m as f64 + 0.5) / N_QUAD as f64))
            .collect();
        let mut means = vec![0.0; N_S * N_C];
        for r in 0..N_S {
            let s = r as f64 * S_STEP;
            for q in 0..N_C {
                let c = C_MIN + q as f64 * C_STEP;
                means[r * N_C + q] = if r == 0 {
                    q_of(c)
                } else {
                    nodes.iter().map(|z| q_of(c + s * z)).sum::<f64>() / N_QUAD as f64
                };
            }
        }
        // Enforce monotone means along c so row inversion is well posed.
        for r in 0..N_S {
            for q in 1..N_C {
                let prev = means[r * N_C + q - 1];
                if means[r * N_C + q] < prev {
                    means[r * N_C + q] = prev;
                }
            }
        }
        let rho_map = correlation_map(&qtab, n_g);
        LocalSampler {
            target,
            normal,
            means,
            rho_map,
        }
    }

    pub fn target(&self) -> &TargetDistribution {
        &self.target
    }

    /// Location `c` in row `r` whose local mean equals `m`.
    fn invert_row(&self, r: usize, m: f64) -> f64 {
        let row = &self.means[r * N_C..(r + 1) * N_C];
        if m <= row[0] {
            return C_MIN;
        }
        if m >= row[N_C - 1] {
            return C_MIN + (N_C - 1) as f64 * C_STEP;
        }
        let hi = row.partition_point(|&v| v < m).max(1);
        let lo = hi - 1;
        let span = row[hi] - row[lo];
        let f = if span > 0.0 { (m - row[lo]) / span } else { 0.0 };
        C_MIN + (lo as f64 + f) * C_STEP
    }

    /// Normal-score spread equivalent to a kriging variance: the data-space
    /// correlation implied by `variance` is mapped back to normal scores.
    pub fn spread(&self, variance: f64) -> f64 {
        let r = (variance / self.target.variance()).clamp(0.0, 1.0);
        let rho_z = (1.0 - r).sqrt();
        let n = self.rho_map.len();
        let hi = self.rho_map.partition_point(|&v| v < rho_z).clamp(1, n - 1);
        let lo = hi - 1;
        let span = self.rho_map[hi] - self.rho_map[lo];
        let f = if span > 0.0 { ((rho_z - self.rho_map[lo]) / span).clamp(0.0, 1.0) } else { 0.0 };
        let rho_y = (lo as f64 + f) / (n - 1) as f64;
        (1.0 - rho_y * rho_y).max(0.0).sqrt()
    }

    /// Normal-score window `(c, s)` for a local mean and variance.
    pub fn window(&self, mean: f64, variance: f64) -> (f64, f64) {
        let x = (self.spread(variance) / S_STEP).clamp(0.0, (N_S - 1) as f64);
        let r = (x as usize).min(N_S - 2);
        let f = x - r as f64;
        let c0 = self.invert_row(r, mean);
        let c1 = self.invert_row(r + 1, mean);
        (c0 + f * (c1 - c0), x * S_STEP)
    }

    /// Draws from the local distribution for kriging result `kr` using the
    /// uniform deviate `u` in (0, 1).
    pub fn sample(&self, kr: &KrigingResult, u: f64) -> LocalDraw {
        let clamped = kr.mean < self.target.min() || kr.mean > self.target.max();
        let mean = self.target.clamp(kr.mean);
        if kr.variance <= 0.0 {
            return LocalDraw { value: mean, clamped };
        }
        let (c, s) = self.window(mean, kr.variance);
        let u = u.clamp(1e-12, 1.0 - 1e-12);
        let g = c + s * self.normal.inverse_cdf(u);
        LocalDraw {
            value: self.target.quantile(self.normal.cdf(g)),
            clamped,
        }
    }
}

const N_HERMITE: usize = 80;
const N_RHO: usize = 1001;

/// `rho_z(rho_y) = sum_n c_n^2 rho_y^n / sum_n c_n^2` from the Hermite
/// coefficients of the normal-score quantile function tabulated in `qtab`.
fn correlation_map(qtab: &[f64], n_g: usize) -> Vec<f64> {
    let h = 1.0 / G_PER_UNIT;
    let mut coef = vec![0.0; N_HERMITE + 1];
    let mut he = vec![0.0; N_HERMITE + 1];
    for (i, q) in qtab.iter().enumerate().take(n_g) {
        let g = -G_LIM + i as f64 * h;
        let w = (-0.5 * g * g).exp() / (2.0 * std::f64::consts::PI).sqrt() * h;
        // Orthonormal Hermite polynomials by recursion.
        he[0] = 1.0;
        he[1] = g;
        for n in 1..N_HERMITE {
            he[n + 1] = (g * he[n] - (n as f64).sqrt() * he[n - 1]) / ((n + 1) as f64).sqrt();
        }
        for n in 1..=N_HERMITE {
            coef[n] += w * q * he[n];
        }
    }
    let sq: Vec<f64> = coef.iter().map(|c| c * c).collect();
    let total: f64 = sq[1..].iter().sum();
    (0..N_RHO)
        .map(|k| {
            let rho = k as f64 / (N_RHO - 1) as f64;
            let mut p = 1.0;
            let mut acc = 0.0;
            for c2 in &sq[1..] {
                p *= rho;
                acc += c2 * p;
            }
            if total > 0.0 { acc / total } else { rho }
        })
        .collect()
}

/// One DSS draw. Builds the sampler tables; use [`LocalSampler`] directly
/// when drawing repeatedly from one target.
pub fn local_sample(kr: &KrigingResult, target: &TargetDistribution, u: f64) -> f64 {
    let draw = LocalSampler::new(target.clone()).sample(kr, u);
    if draw.clamped {
        log::debug!("kriging mean {} clamped to target support", kr.mean);
    }
    draw.value
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;
    use rand::Rng;

    fn gaussian_target(mu: f64, sd: f64) -> TargetDistribution {
        let n = std_normal();
        let support: Vec<f64> = (0..4096).map(|i| mu - 4.0 * sd + 8.0 * sd * i as f64 / 4095.0).collect();
        let lo = n.cdf(-4.0);
        let hi = n.cdf(4.0);
        let cdf = support.iter().map(|x| (n.cdf((x - mu) / sd) - lo) / (hi - lo)).collect();
        TargetDistribution::new(support, cdf).unwrap()
    }

    fn bimodal_target() -> TargetDistribution {
        let n = std_normal();
        let (w1, m1, s1, m2, s2) = (0.3, 4000.0, 300.0, 7000.0, 500.0);
        let lo = m1 - 4.0 * s1;
        let hi = m2 + 4.0 * s2;
        let f = |x: f64| w1 * n.cdf((x - m1) / s1) + (1.0 - w1) * n.cdf((x - m2) / s2);
        let support: Vec<f64> = (0..4096).map(|i| lo + (hi - lo) * i as f64 / 4095.0).collect();
        let cdf = support.iter().map(|&x| (f(x) - f(lo)) / (f(hi) - f(lo))).collect();
        TargetDistribution::new(support, cdf).unwrap()
    }

    #[test]
    fn rejects_bad_tables() {
        assert!(TargetDistribution::new(vec![], vec![]).is_err());
        assert!(TargetDistribution::new(vec![1.0, 1.0], vec![0.5, 1.0]).is_err());
        assert!(TargetDistribution::new(vec![1.0, 2.0], vec![0.5, 0.9]).is_err());
        assert!(TargetDistribution::new(vec![1.0, 2.0], vec![0.6, 0.5]).is_err());
    }

    #[test]
    fn empirical_target() {
        let t = TargetDistribution::from_samples(&[3.0, 1.0, 2.0, 2.0]).unwrap();
        assert_eq!(t.support(), &[1.0, 2.0, 3.0]);
        assert_eq!(t.cdf_values(), &[0.25, 0.75, 1.0]);
        assert_eq!(t.quantile(0.1), 1.0);
        assert_eq!(t.quantile(1.0), 3.0);
        assert_eq!(t.cdf(0.5), 0.0);
        assert_eq!(t.cdf(3.5), 1.0);
    }

    #[test]
    fn quantile_inverts_cdf() {
        let t = bimodal_target();
        for p in [0.01, 0.2, 0.3, 0.5, 0.77, 0.99] {
            assert!((t.cdf(t.quantile(p)) - p).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_variance_returns_mean() {
        let t = bimodal_target();
        let v = t.support()[1234];
        let kr = KrigingResult { mean: v, variance: 0.0 };
        assert_eq!(local_sample(&kr, &t, 0.3), v);
    }

    #[test]
    fn median_of_symmetric_target() {
        let t = gaussian_target(6000.0, 800.0);
        let median = t.quantile(0.5);
        let kr = KrigingResult {
            mean: median,
            variance: 0.4 * t.variance(),
        };
        let v = local_sample(&kr, &t, 0.5);
        assert!((v - median).abs() < 1e-6 * median, "{v} vs {median}");
    }

    #[test]
    fn out_of_support_mean_is_clamped() {
        let t = gaussian_target(6000.0, 800.0);
        let s = LocalSampler::new(t.clone());
        let d = s.sample(&KrigingResult { mean: 1.0e6, variance: 0.0 }, 0.5);
        assert!(d.clamped);
        assert_eq!(d.value, t.max());
    }

    #[test]
    fn spread_limits() {
        let t = bimodal_target();
        let s = LocalSampler::new(t.clone());
        assert!((s.spread(t.variance()) - 1.0).abs() < 1e-12);
        assert!(s.spread(0.0).abs() < 1e-12);
        assert!(s.spread(0.25 * t.variance()) < 0.5);
    }

    #[test]
    fn gaussian_target_spread_is_kriging_ratio() {
        // A Gaussian target has an identity correlation map.
        let t = gaussian_target(5000.0, 400.0);
        let s = LocalSampler::new(t.clone());
        for r in [0.1, 0.4, 0.8] {
            assert!((s.spread(r * t.variance()) - r.sqrt()).abs() < 0.01, "r={r}");
        }
    }

    #[test]
    fn window_matches_requested_mean() {
        let t = bimodal_target();
        let s = LocalSampler::new(t.clone());
        let (c, sd) = s.window(t.mean(), t.variance());
        assert!(c.abs() < 0.02 && (sd - 1.0).abs() < 1e-9, "c={c} s={sd}");
        // Check the local mean by brute-force sampling of the window.
        let n = std_normal();
        let mut rng = rng_from(5);
        for (m, v) in [(6000.0, 4.0e5), (4500.0, 1.0e5), (7500.0, 1.0e6)] {
            let (c, sd) = s.window(m, v);
            let draws: Vec<f64> = (0..40000)
                .map(|_| t.quantile(n.cdf(c + sd * n.inverse_cdf(rng.random_range(1e-9..1.0)))))
                .collect();
            let mean = draws.iter().sum::<f64>() / draws.len() as f64;
            assert!((mean - m).abs() < 0.02 * t.variance().sqrt(), "mean {mean} vs {m}");
        }
    }

    #[test]
    fn unconditional_draws_reproduce_target() {
        let t = bimodal_target();
        let s = LocalSampler::new(t.clone());
        let kr = KrigingResult {
            mean: t.mean(),
            variance: t.variance(),
        };
        let mut rng = rng_from(99);
        let mut draws: Vec<f64> = (0..100_000).map(|_| s.sample(&kr, rng.random::<f64>()).value).collect();
        draws.sort_by(f64::total_cmp);
        let n = draws.len() as f64;
        let d = draws
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let f = t.cdf(x);
                (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
            })
            .fold(0.0, f64::max);
        assert!(d < 0.01, "KS D = {d}");
    }
}
