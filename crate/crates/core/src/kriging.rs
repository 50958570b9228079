//! Simple kriging and collocated co-kriging (Markov model 1) kernels.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::solve_in_place;
use crate::variogram::{CovarianceEvaluator, VariogramModel};

/// Relative tolerance below which a negative kriging variance is treated as
/// round-off and clamped to zero.
pub const VARIANCE_CLAMP_TOL: f64 = 1e-9;
const PIVOT_TOL: f64 = 1e-10;

/// Search neighborhood for conditioning data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Neighborhood {
    pub max_data: usize,
    /// Radii along the model's (a1, a2, a3) axes; `None` uses the ranges.
    pub search_radii: Option<[f64; 3]>,
}

impl Default for Neighborhood {
    fn default() -> Self {
        Neighborhood {
            max_data: 32,
            search_radii: None,
        }
    }
}

impl Neighborhood {
    pub fn radii(&self, model: &VariogramModel) -> [f64; 3] {
        self.search_radii.unwrap_or([model.a1, model.a2, model.a3])
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_data == 0 {
            return Err(Error::Domain("neighborhood max_data must be at least 1".into()));
        }
        if let Some(r) = self.search_radii {
            if r.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
                return Err(Error::Domain(format!("search radii must be positive, got {r:?}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KrigingResult {
    pub mean: f64,
    pub variance: f64,
}

/// The collocated secondary datum for co-kriging.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Secondary {
    pub value: f64,
    pub mean: f64,
    pub variance: f64,
    /// Local primary-secondary correlation coefficient.
    pub cc: f64,
}

/// Reusable kriging workspace. Data positions are given as offsets from the
/// target location.
#[derive(Debug, Clone)]
pub struct Kriger {
    cov: CovarianceEvaluator,
    mat: Vec<f64>,
    rhs: Vec<f64>,
    rhs_copy: Vec<f64>,
}

impl Kriger {
    pub fn new(model: &VariogramModel) -> Self {
        Kriger {
            cov: model.evaluator(),
            mat: Vec::new(),
            rhs: Vec::new(),
            rhs_copy: Vec::new(),
        }
    }

    fn fill_primary(&mut self, offsets: &[[f64; 3]], n: usize) {
        self.mat.clear();
        self.mat.resize(n * n, 0.0);
        self.rhs.clear();
        self.rhs.resize(n, 0.0);
        let m = offsets.len();
        for a in 0..m {
            self.mat[a * n + a] = self.cov.total();
            for b in a + 1..m {
                let h = [
                    offsets[a][0] - offsets[b][0],
                    offsets[a][1] - offsets[b][1],
                    offsets[a][2] - offsets[b][2],
                ];
                let c = self.cov.covariance(h);
                self.mat[a * n + b] = c;
                self.mat[b * n + a] = c;
            }
            self.rhs[a] = self.cov.covariance(offsets[a]);
        }
    }

    fn finish(&self, mean: f64, variance: f64) -> Result<KrigingResult> {
        let c0 = self.cov.total();
        let variance = if variance < 0.0 {
            if variance >= -VARIANCE_CLAMP_TOL * c0 {
                0.0
            } else {
                return Err(Error::DegenerateData(format!(
                    "kriging variance {variance} is negative beyond tolerance"
                )));
            }
        } else {
            variance
        };
        Ok(KrigingResult { mean, variance })
    }

    pub fn simple(&mut self, offsets: &[[f64; 3]], values: &[f64], global_mean: f64) -> Result<KrigingResult> {
        let n = offsets.len();
        if n == 0 {
            return Ok(KrigingResult {
                mean: global_mean,
                variance: self.cov.total(),
            });
        }
        self.fill_primary(offsets, n);
        self.rhs_copy.clone_from(&self.rhs);
        solve_in_place(&mut self.mat, &mut self.rhs, n, PIVOT_TOL)
            .ok_or_else(|| Error::DegenerateData(format!("singular {n}x{n} simple kriging system")))?;
        let w = &self.rhs;
        let mut mean = global_mean;
        let mut red = 0.0;
        for a in 0..n {
            mean += w[a] * (values[a] - global_mean);
            red += w[a] * self.rhs_copy[a];
        }
        self.finish(mean, self.cov.total() - red)
    }

    pub fn collocated(
        &mut self,
        offsets: &[[f64; 3]],
        values: &[f64],
        global_mean: f64,
        secondary: &Secondary,
    ) -> Result<KrigingResult> {
        if secondary.cc == 0.0 || secondary.variance <= 0.0 {
            return self.simple(offsets, values, global_mean);
        }
        let m = offsets.len();
        let n = m + 1;
        let c0 = self.cov.total();
        let scale = secondary.cc * (c0 * secondary.variance).sqrt();
        self.fill_primary(offsets, n);
        for a in 0..m {
            // C12(h) = cc * sqrt(C1(0) C2(0)) * rho1(h)
            let c12 = scale * self.rhs[a] / c0;
            self.mat[a * n + m] = c12;
            self.mat[m * n + a] = c12;
        }
        self.mat[m * n + m] = secondary.variance;
        self.rhs[m] = scale;
        self.rhs_copy.clone_from(&self.rhs);
        solve_in_place(&mut self.mat, &mut self.rhs, n, PIVOT_TOL)
            .ok_or_else(|| Error::DegenerateData(format!("singular {n}x{n} co-kriging system")))?;
        let w = &self.rhs;
        let mut mean = global_mean + w[m] * (secondary.value - secondary.mean);
        let mut red = w[m] * self.rhs_copy[m];
        for a in 0..m {
            mean += w[a] * (values[a] - global_mean);
            red += w[a] * self.rhs_copy[a];
        }
        self.finish(mean, c0 - red)
    }
}

/// Offsets from the target; exact repeats of a (position, value) pair are
/// dropped since they carry no information.
fn offsets_of(target: [f64; 3], data: &[([f64; 3], f64)]) -> (Vec<[f64; 3]>, Vec<f64>) {
    let mut offsets = Vec::with_capacity(data.len());
    let mut values: Vec<f64> = Vec::with_capacity(data.len());
    for (p, v) in data {
        let h = [p[0] - target[0], p[1] - target[1], p[2] - target[2]];
        if offsets.iter().zip(&values).any(|(o, w)| *o == h && w == v) {
            continue;
        }
        offsets.push(h);
        values.push(*v);
    }
    (offsets, values)
}

/// Simple kriging with a known global mean.
pub fn simple_krige(
    target: [f64; 3],
    data: &[([f64; 3], f64)],
    global_mean: f64,
    model: &VariogramModel,
) -> Result<KrigingResult> {
    let (offsets, values) = offsets_of(target, data);
    Kriger::new(model).simple(&offsets, &values, global_mean)
}

/// Collocated simple co-kriging under the Markov-1 model.
pub fn collocated_cokrige(
    target: [f64; 3],
    data: &[([f64; 3], f64)],
    secondary: &Secondary,
    global_mean: f64,
    model: &VariogramModel,
) -> Result<KrigingResult> {
    if !secondary.cc.is_finite() {
        return Err(Error::Domain(format!("local correlation {} is not finite", secondary.cc)));
    }
    let (offsets, values) = offsets_of(target, data);
    Kriger::new(model).collocated(&offsets, &values, global_mean, secondary)
}
