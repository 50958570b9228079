//! Anisotropic single-structure variogram models and experimental variograms.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VariogramKind {
    #[default]
    Spherical,
    Exponential,
    Gaussian,
}

impl VariogramKind {
    /// Normalized structure function: 0 at d = 0, tending to 1. Exponential and
    /// Gaussian use the practical range (95% of the sill at d = 1).
    #[inline]
    pub fn structure(self, d: f64) -> f64 {
        match self {
            VariogramKind::Spherical => {
                if d >= 1.0 {
                    1.0
                } else {
                    1.5 * d - 0.5 * d * d * d
                }
            }
            VariogramKind::Exponential => 1.0 - (-3.0 * d).exp(),
            VariogramKind::Gaussian => 1.0 - (-3.0 * d * d).exp(),
        }
    }
}

/// Geometric-anisotropy variogram. `a1` lies along the azimuth measured from
/// the grid i-axis, `a2` is perpendicular to it in the horizontal plane and
/// `a3` is vertical (ms).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariogramModel {
    pub kind: VariogramKind,
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
    pub azimuth_deg: f64,
    pub sill: f64,
    pub nugget: f64,
}

impl VariogramModel {
    pub fn new(kind: VariogramKind, a1: f64, a2: f64, a3: f64, azimuth_deg: f64, sill: f64, nugget: f64) -> Result<Self> {
        let m = VariogramModel {
            kind,
            a1,
            a2,
            a3,
            azimuth_deg,
            sill,
            nugget,
        };
        m.validate()?;
        Ok(m)
    }

    /// Spherical, no nugget, horizontally isotropic.
    pub fn spherical(range_h: f64, range_v: f64, sill: f64) -> Result<Self> {
        Self::new(VariogramKind::Spherical, range_h, range_h, range_v, 0.0, sill, 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, a) in [("a1", self.a1), ("a2", self.a2), ("a3", self.a3)] {
            if !(a.is_finite() && a > 0.0) {
                return Err(Error::Domain(format!("variogram range {name} must be positive, got {a}")));
            }
        }
        if !(0.0..180.0).contains(&self.azimuth_deg) {
            return Err(Error::Domain(format!(
                "azimuth must lie in [0, 180), got {}",
                self.azimuth_deg
            )));
        }
        if !(self.sill.is_finite() && self.sill > 0.0) {
            return Err(Error::Domain(format!("sill must be positive, got {}", self.sill)));
        }
        if !(self.nugget.is_finite() && self.nugget >= 0.0) {
            return Err(Error::Domain(format!("nugget must be non-negative, got {}", self.nugget)));
        }
        Ok(())
    }

    pub fn total_variance(&self) -> f64 {
        self.nugget + self.sill
    }

    /// Lag rotated into the model frame (a1-axis, a2-axis, vertical).
    #[inline]
    pub fn rotate(&self, h: [f64; 3]) -> [f64; 3] {
        let (s, c) = self.azimuth_deg.to_radians().sin_cos();
        [h[0] * c + h[1] * s, -h[0] * s + h[1] * c, h[2]]
    }

    /// Anisotropic distance in units of range.
    #[inline]
    pub fn normalized_distance(&self, h: [f64; 3]) -> f64 {
        let r = self.rotate(h);
        let u = r[0] / self.a1;
        let v = r[1] / self.a2;
        let w = r[2] / self.a3;
        (u * u + v * v + w * w).sqrt()
    }

    /// Correlogram rho(h) = C(h) / C(0).
    #[inline]
    pub fn correlation(&self, h: [f64; 3]) -> f64 {
        self.covariance(h) / self.total_variance()
    }

    #[inline]
    pub fn gamma(&self, h: [f64; 3]) -> f64 {
        gamma(self, h)
    }

    #[inline]
    pub fn covariance(&self, h: [f64; 3]) -> f64 {
        covariance(self, h)
    }

    /// Precomputes the rotation for repeated evaluation.
    pub fn evaluator(&self) -> CovarianceEvaluator {
        let (s, c) = self.azimuth_deg.to_radians().sin_cos();
        CovarianceEvaluator {
            kind: self.kind,
            cos: c,
            sin: s,
            inv: [1.0 / self.a1, 1.0 / self.a2, 1.0 / self.a3],
            sill: self.sill,
            nugget: self.nugget,
        }
    }
}

/// Covariance function with the azimuth rotation hoisted out.
#[derive(Debug, Clone, Copy)]
pub struct CovarianceEvaluator {
    kind: VariogramKind,
    cos: f64,
    sin: f64,
    inv: [f64; 3],
    sill: f64,
    nugget: f64,
}

impl CovarianceEvaluator {
    #[inline]
    pub fn distance(&self, h: [f64; 3]) -> f64 {
        let u = (h[0] * self.cos + h[1] * self.sin) * self.inv[0];
        let v = (-h[0] * self.sin + h[1] * self.cos) * self.inv[1];
        let w = h[2] * self.inv[2];
        (u * u + v * v + w * w).sqrt()
    }

    #[inline]
    pub fn covariance(&self, h: [f64; 3]) -> f64 {
        if h == [0.0; 3] {
            return self.sill + self.nugget;
        }
        self.sill * (1.0 - self.kind.structure(self.distance(h)))
    }

    pub fn total(&self) -> f64 {
        self.sill + self.nugget
    }
}

/// Semivariogram at lag `h` (physical units). Zero at the origin; the nugget
/// applies to every non-zero lag.
pub fn gamma(model: &VariogramModel, h: [f64; 3]) -> f64 {
    if h == [0.0; 3] {
        return 0.0;
    }
    model.nugget + model.sill * model.kind.structure(model.normalized_distance(h))
}

pub fn covariance(model: &VariogramModel, h: [f64; 3]) -> f64 {
    model.total_variance() - gamma(model, h)
}

/// One bin of an experimental variogram.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariogramLag {
    pub lag: f64,
    pub gamma: Option<f64>,
    pub pairs: usize,
}

/// Experimental semivariogram along `direction`.
///
/// A pair contributes to bin l when its separation, projected on the unit
/// `direction`, lies within `l * lag ± tol`. Bins run from 1 to `n_lags`.
pub fn experimental_variogram(
    data: &[([f64; 3], f64)],
    direction: [f64; 3],
    lag: f64,
    n_lags: usize,
    tol: f64,
) -> Result<Vec<VariogramLag>> {
    if !(lag > 0.0) || !(tol > 0.0 && tol <= lag / 2.0) {
        return Err(Error::Domain(format!(
            "need lag > 0 and tol in (0, lag/2], got lag={lag} tol={tol}"
        )));
    }
    if data.len() < 2 {
        return Ok(Vec::new());
    }
    let norm = direction.iter().map(|d| d * d).sum::<f64>().sqrt();
    if !(norm > 0.0) {
        return Err(Error::Domain("direction must be non-zero".into()));
    }
    let dir = direction.map(|d| d / norm);
    let mut sums = vec![0.0; n_lags];
    let mut counts = vec![0usize; n_lags];
    for (a, (pa, za)) in data.iter().enumerate() {
        for (pb, zb) in &data[a + 1..] {
            let proj = ((pb[0] - pa[0]) * dir[0] + (pb[1] - pa[1]) * dir[1] + (pb[2] - pa[2]) * dir[2]).abs();
            let bin = (proj / lag).round();
            if bin < 1.0 || bin > n_lags as f64 {
                continue;
            }
            if (proj - bin * lag).abs() <= tol {
                let b = bin as usize - 1;
                sums[b] += (za - zb) * (za - zb);
                counts[b] += 1;
            }
        }
    }
    Ok((0..n_lags)
        .map(|b| VariogramLag {
            lag: (b + 1) as f64 * lag,
            gamma: (counts[b] > 0).then(|| sums[b] / (2.0 * counts[b] as f64)),
            pairs: counts[b],
        })
        .collect())
}

/// Experimental variogram of a gridded field along a grid axis, pairing cells
/// `step` apart. Much faster than the scattered-data version for full volumes.
pub fn grid_axis_variogram(values: &[f32], grid: &crate::grid::Grid3, axis: usize, n_lags: usize) -> Vec<VariogramLag> {
    let (nx, ny, nz) = (grid.nx, grid.ny, grid.nz);
    let cell = [grid.dx, grid.dy, grid.dz][axis];
    (1..=n_lags)
        .map(|step| {
            let mut sum = 0.0;
            let mut count = 0usize;
            for j in 0..ny {
                for i in 0..nx {
                    for k in 0..nz {
                        let (i2, j2, k2) = match axis {
                            0 => (i + step, j, k),
                            1 => (i, j + step, k),
                            _ => (i, j, k + step),
                        };
                        if i2 >= nx || j2 >= ny || k2 >= nz {
                            continue;
                        }
                        let d = values[grid.index(i, j, k)] as f64 - values[grid.index(i2, j2, k2)] as f64;
                        sum += d * d;
                        count += 1;
                    }
                }
            }
            VariogramLag {
                lag: step as f64 * cell,
                gamma: (count > 0).then(|| sum / (2.0 * count as f64)),
                pairs: count,
            }
        })
        .collect()
}

/// Writes `lag,gamma,pairs`; empty bins leave `gamma` blank.
pub fn write_variogram_csv(path: impl AsRef<Path>, lags: &[VariogramLag]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("lag,gamma,pairs\n");
    for l in lags {
        let g = l.gamma.map(|g| g.to_string()).unwrap_or_default();
        out.push_str(&format!("{},{},{}\n", l.lag, g, l.pairs));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sph(a1: f64, a2: f64, a3: f64, az: f64) -> VariogramModel {
        VariogramModel::new(VariogramKind::Spherical, a1, a2, a3, az, 1.0, 0.0).unwrap()
    }

    #[test]
    fn origin_and_range() {
        for kind in [VariogramKind::Spherical, VariogramKind::Exponential, VariogramKind::Gaussian] {
            let m = VariogramModel::new(kind, 100.0, 50.0, 10.0, 30.0, 2.0, 0.5).unwrap();
            assert_eq!(gamma(&m, [0.0; 3]), 0.0);
            assert_eq!(covariance(&m, [0.0; 3]), 2.5);
        }
        let m = sph(100.0, 100.0, 10.0, 0.0);
        assert_eq!(gamma(&m, [100.0, 0.0, 0.0]), 1.0);
        assert_eq!(covariance(&m, [150.0, 0.0, 0.0]), 0.0);
    }

    #[test]
    fn spherical_half_range() {
        let m = sph(100.0, 100.0, 10.0, 0.0);
        assert!((gamma(&m, [50.0, 0.0, 0.0]) - 0.6875).abs() < 1e-15);
        assert!((covariance(&m, [50.0, 0.0, 0.0]) - 0.3125).abs() < 1e-15);
        assert!((gamma(&m, [0.0, 0.0, 5.0]) - 0.6875).abs() < 1e-15);
    }

    #[test]
    fn azimuth_orients_major_axis() {
        let m = sph(200.0, 50.0, 10.0, 90.0);
        // a1 points along grid j when azimuth is 90.
        assert!((m.normalized_distance([0.0, 100.0, 0.0]) - 0.5).abs() < 1e-12);
        assert!((m.normalized_distance([25.0, 0.0, 0.0]) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn bad_models_rejected() {
        assert!(VariogramModel::spherical(0.0, 10.0, 1.0).is_err());
        assert!(VariogramModel::new(VariogramKind::Spherical, 1.0, 1.0, 1.0, 180.0, 1.0, 0.0).is_err());
        assert!(VariogramModel::new(VariogramKind::Spherical, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn experimental_two_points() {
        let data = [([0.0, 0.0, 0.0], 1.0), ([10.0, 0.0, 0.0], 3.0)];
        let v = experimental_variogram(&data, [1.0, 0.0, 0.0], 10.0, 3, 2.0).unwrap();
        assert_eq!(v[0].gamma, Some(2.0));
        assert_eq!(v[0].pairs, 1);
        assert_eq!(v[1].gamma, None);
        assert_eq!(v[1].pairs, 0);
        assert!(experimental_variogram(&data[..1], [1.0, 0.0, 0.0], 10.0, 3, 2.0).unwrap().is_empty());
        assert!(experimental_variogram(&data, [1.0, 0.0, 0.0], 10.0, 3, 6.0).is_err());
    }

    #[test]
    fn experimental_constant_field() {
        let data: Vec<_> = (0..20).map(|i| ([i as f64, 0.0, 0.0], 7.0)).collect();
        for l in experimental_variogram(&data, [1.0, 0.0, 0.0], 1.0, 5, 0.5).unwrap() {
            assert_eq!(l.gamma, Some(0.0));
        }
    }

    #[test]
    fn grid_axis_matches_scattered_on_a_line() {
        let g = crate::grid::Grid3::new(9, 1, 1, 2.0, 3.0, 1.0).unwrap();
        let vals: Vec<f32> = (0..g.n_cells()).map(|x| ((x * 7919) % 13) as f32).collect();
        let data: Vec<_> = (0..g.n_cells())
            .map(|idx| {
                let (i, j, k) = g.coords(idx);
                (g.position(i, j, k), vals[idx] as f64)
            })
            .collect();
        let a = grid_axis_variogram(&vals, &g, 0, 4);
        let b = experimental_variogram(&data, [1.0, 0.0, 0.0], 2.0, 4, 1.0).unwrap();
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn monotone_in_distance(d1 in 0.0f64..3.0, d2 in 0.0f64..3.0) {
            for kind in [VariogramKind::Spherical, VariogramKind::Exponential, VariogramKind::Gaussian] {
                let m = VariogramModel::new(kind, 10.0, 10.0, 10.0, 0.0, 1.0, 0.1).unwrap();
                let (lo, hi) = if d1 < d2 { (d1, d2) } else { (d2, d1) };
                prop_assert!(gamma(&m, [lo * 10.0, 0.0, 0.0]) <= gamma(&m, [hi * 10.0, 0.0, 0.0]) + 1e-15);
            }
        }

        #[test]
        fn frame_invariance(hx in -300.0f64..300.0, hy in -300.0f64..300.0, hz in -20.0f64..20.0,
                            az in 0.0f64..90.0, rot in 0.0f64..89.0) {
            let m = sph(200.0, 80.0, 12.0, az);
            let m2 = sph(200.0, 80.0, 12.0, az + rot);
            let (s, c) = rot.to_radians().sin_cos();
            let h2 = [hx * c - hy * s, hx * s + hy * c, hz];
            prop_assert!((gamma(&m, [hx, hy, hz]) - gamma(&m2, h2)).abs() < 1e-9);
        }

        #[test]
        fn symmetric_and_complementary(hx in -300.0f64..300.0, hy in -300.0f64..300.0, hz in -20.0f64..20.0, nug in 0.0f64..1.0) {
            let m = VariogramModel::new(VariogramKind::Exponential, 150.0, 60.0, 9.0, 35.0, 2.0, nug).unwrap();
            let h = [hx, hy, hz];
            prop_assert!((gamma(&m, h) - gamma(&m, [-hx, -hy, -hz])).abs() < 1e-12);
            prop_assert!((gamma(&m, h) + covariance(&m, h) - m.total_variance()).abs() < 1e-12);
            prop_assert!(covariance(&m, h) >= 0.0);
            let e = m.evaluator();
            prop_assert!((e.covariance(h) - covariance(&m, h)).abs() < 1e-12);
        }
    }
}
