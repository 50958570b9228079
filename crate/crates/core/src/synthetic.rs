//! Procedural channelized impedance model with its seismic response and
//! wells, for testing the inversion end to end.

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{synthesize, Wavelet};
use crate::grid::{Grid3, TraceId, Volume, WellSet};
use crate::rng::{derive_seed, rng_from, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChannelSpec {
    pub count: usize,
    /// Centerline amplitude in cells.
    pub amplitude_cells: f64,
    pub wavelength_cells: f64,
    pub width_cells: f64,
    pub thickness_layers: usize,
}

impl Default for ChannelSpec {
    fn default() -> Self {
        ChannelSpec {
            count: 4,
            amplitude_cells: 8.0,
            wavelength_cells: 30.0,
            width_cells: 5.0,
            thickness_layers: 6,
        }
    }
}

/// Impedance statistics of one facies, with the smoothing half-widths of its
/// correlated Gaussian field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaciesStats {
    pub mean: f64,
    pub sd: f64,
    pub smooth_h_cells: usize,
    pub smooth_v_layers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub grid: Grid3,
    pub channels: ChannelSpec,
    /// Channel fill (low impedance sand).
    pub channel: FaciesStats,
    /// Background (high impedance shale).
    pub background: FaciesStats,
    pub wavelet_freq_hz: f64,
    /// Signal-to-noise ratio of the additive noise; `None` is noise free.
    pub snr_db: Option<f64>,
    /// Fraction of traces that receive noise.
    pub noisy_fraction: f64,
    pub n_wells: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            grid: Grid3 {
                nx: 60,
                ny: 70,
                nz: 20,
                dx: 25.0,
                dy: 25.0,
                dz: 4.0,
            },
            channels: ChannelSpec::default(),
            channel: FaciesStats {
                mean: 4200.0,
                sd: 450.0,
                smooth_h_cells: 3,
                smooth_v_layers: 1,
            },
            background: FaciesStats {
                mean: 7100.0,
                sd: 290.0,
                smooth_h_cells: 4,
                smooth_v_layers: 2,
            },
            wavelet_freq_hz: 25.0,
            snr_db: None,
            noisy_fraction: 1.0,
            n_wells: 23,
            seed: 1,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        for (name, f) in [("channel", &self.channel), ("background", &self.background)] {
            if !(f.sd.is_finite() && f.sd > 0.0 && f.mean.is_finite()) {
                return Err(Error::Domain(format!("{name} facies needs finite mean and positive sd")));
            }
            if f.mean - 4.0 * f.sd <= 0.0 {
                return Err(Error::Domain(format!(
                    "{name} facies mean {} is within 4 sd of zero impedance",
                    f.mean
                )));
            }
        }
        if self.n_wells > self.grid.n_traces() {
            return Err(Error::Domain(format!(
                "{} wells do not fit in {} columns",
                self.n_wells,
                self.grid.n_traces()
            )));
        }
        if !(0.0..=1.0).contains(&self.noisy_fraction) {
            return Err(Error::Domain("noisy_fraction must lie in [0, 1]".into()));
        }
        if let Some(snr) = self.snr_db {
            if !snr.is_finite() {
                return Err(Error::Domain("snr_db must be finite".into()));
            }
        }
        if !(self.wavelet_freq_hz > 0.0) {
            return Err(Error::Domain("wavelet frequency must be positive".into()));
        }
        Ok(())
    }

    pub fn wavelet(&self) -> Result<Wavelet> {
        Wavelet::ricker(self.wavelet_freq_hz, self.grid.dz)
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub true_ip: Volume,
    pub observed: Volume,
    pub wells: WellSet,
    pub wavelet: Wavelet,
    /// Boolean channel indicator, 1 inside channels.
    pub facies: Vec<u8>,
    /// Trace indices that received noise.
    pub noisy_traces: Vec<usize>,
}

/// Zero-mean, unit-variance field from box-smoothed white noise.
fn smooth_field(grid: &Grid3, h: usize, v: usize, rng: &mut Rng) -> Vec<f64> {
    let n = grid.n_cells();
    let mut f: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    let dims = [grid.nx, grid.ny, grid.nz];
    for (axis, half) in [(0, h), (1, h), (2, v)] {
        if half == 0 {
            continue;
        }
        let mut out = vec![0.0; n];
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                for k in 0..grid.nz {
                    let pos = [i, j, k][axis] as isize;
                    let mut acc = 0.0;
                    let mut cnt = 0.0;
                    for d in -(half as isize)..=half as isize {
                        let p = pos + d;
                        if p < 0 || p >= dims[axis] as isize {
                            continue;
                        }
                        let mut c = [i, j, k];
                        c[axis] = p as usize;
                        acc += f[grid.index(c[0], c[1], c[2])];
                        cnt += 1.0;
                    }
                    out[grid.index(i, j, k)] = acc / cnt;
                }
            }
        }
        f = out;
    }
    let mean = f.iter().sum::<f64>() / n as f64;
    let sd = (f.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
    f.iter().map(|x| if sd > 0.0 { (x - mean) / sd } else { 0.0 }).collect()
}

fn channel_indicator(spec: &SyntheticSpec, rng: &mut Rng) -> Vec<u8> {
    let g = &spec.grid;
    let c = &spec.channels;
    let mut ind = vec![0u8; g.n_cells()];
    for _ in 0..c.count {
        let j0 = rng.random_range(0.0..g.ny as f64);
        let phase = rng.random_range(0.0..std::f64::consts::TAU);
        let amp = c.amplitude_cells * rng.random_range(0.5..1.0);
        let thick = c.thickness_layers.min(g.nz);
        let k0 = rng.random_range(0..=g.nz - thick);
        for i in 0..g.nx {
            let jc = j0 + amp * (std::f64::consts::TAU * i as f64 / c.wavelength_cells + phase).sin();
            for j in 0..g.ny {
                if (j as f64 - jc).abs() <= 0.5 * c.width_cells {
                    for k in k0..k0 + thick {
                        ind[g.index(i, j, k)] = 1;
                    }
                }
            }
        }
    }
    ind
}

/// Column positions spread over a grid of strata, one random column per
/// stratum.
pub fn stratified_columns(grid: &Grid3, n: usize, rng: &mut Rng) -> Vec<TraceId> {
    if n == 0 {
        return Vec::new();
    }
    let aspect = grid.nx as f64 / grid.ny as f64;
    let sx = ((n as f64 * aspect).sqrt().ceil() as usize).clamp(1, grid.nx);
    let sy = n.div_ceil(sx).min(grid.ny);
    let mut strata: Vec<(usize, usize)> = (0..sy).flat_map(|b| (0..sx).map(move |a| (a, b))).collect();
    strata.shuffle(rng);
    let mut out: Vec<TraceId> = Vec::with_capacity(n);
    for &(a, b) in strata.iter().take(n) {
        let (i0, i1) = (a * grid.nx / sx, ((a + 1) * grid.nx / sx).max(a * grid.nx / sx + 1));
        let (j0, j1) = (b * grid.ny / sy, ((b + 1) * grid.ny / sy).max(b * grid.ny / sy + 1));
        out.push(TraceId {
            i: rng.random_range(i0..i1),
            j: rng.random_range(j0..j1),
        });
    }
    // Fewer strata than wells only happens on tiny grids; fill randomly.
    while out.len() < n {
        let t = TraceId {
            i: rng.random_range(0..grid.nx),
            j: rng.random_range(0..grid.ny),
        };
        if !out.contains(&t) {
            out.push(t);
        }
    }
    out
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let g = spec.grid;
    let mut rng = rng_from(derive_seed(spec.seed, 0));
    let facies = channel_indicator(spec, &mut rng);
    let fc = smooth_field(&g, spec.channel.smooth_h_cells, spec.channel.smooth_v_layers, &mut rng);
    let fb = smooth_field(&g, spec.background.smooth_h_cells, spec.background.smooth_v_layers, &mut rng);
    let values: Vec<f64> = (0..g.n_cells())
        .map(|i| {
            let f = if facies[i] == 1 { &spec.channel } else { &spec.background };
            let z = if facies[i] == 1 { fc[i] } else { fb[i] };
            f.mean + f.sd * z.clamp(-4.0, 4.0)
        })
        .collect();
    if values.iter().any(|&v| v <= 0.0) {
        return Err(Error::Domain("synthetic impedance is not positive".into()));
    }
    let true_ip = Volume::from_f64(g, &values)?;
    let wavelet = spec.wavelet()?;
    let clean = synthesize(&true_ip, &wavelet)?;
    let mut observed = clean.clone();
    let mut noisy_traces = Vec::new();
    if let Some(snr) = spec.snr_db {
        let mut nrng = rng_from(derive_seed(spec.seed, 1));
        let rms = (clean.values().iter().map(|&x| (x as f64).powi(2)).sum::<f64>() / g.n_cells() as f64).sqrt();
        let sd = rms / 10f64.powf(snr / 20.0);
        let mut order: Vec<usize> = (0..g.n_traces()).collect();
        order.shuffle(&mut nrng);
        noisy_traces = order[..(spec.noisy_fraction * g.n_traces() as f64).round() as usize].to_vec();
        noisy_traces.sort_unstable();
        let ids: Vec<TraceId> = g.trace_ids().collect();
        for &t in &noisy_traces {
            for x in observed.trace_mut(ids[t]) {
                let e: f64 = StandardNormal.sample(&mut nrng);
                *x += (sd * e) as f32;
            }
        }
    }
    let mut wrng = rng_from(derive_seed(spec.seed, 2));
    let cols = stratified_columns(&g, spec.n_wells, &mut wrng);
    let named: Vec<(String, TraceId)> = cols
        .into_iter()
        .enumerate()
        .map(|(w, t)| (format!("W{:02}", w + 1), t))
        .collect();
    let wells = WellSet::sample_from(&g, &true_ip, &named);
    Ok(SyntheticData {
        true_ip,
        observed,
        wells,
        wavelet,
        facies,
        noisy_traces,
    })
}
