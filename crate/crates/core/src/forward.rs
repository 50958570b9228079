//! Normal-incidence convolutional forward model and correlation scores.

use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::Volume;

#[derive(Debug, Clone, PartialEq)]
pub struct Wavelet {
    pub samples: Vec<f64>,
    pub center_index: usize,
    /// Sample interval in ms; must equal the grid dz.
    pub dt: f64,
}

impl Wavelet {
    pub fn new(samples: Vec<f64>, center_index: usize, dt: f64) -> Result<Self> {
        let w = Wavelet {
            samples,
            center_index,
            dt,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples.is_empty() || self.samples.iter().any(|x| !x.is_finite()) {
            return Err(Error::Domain("wavelet must be non-empty and finite".into()));
        }
        if self.center_index >= self.samples.len() {
            return Err(Error::Domain(format!(
                "wavelet center {} outside {} samples",
                self.center_index,
                self.samples.len()
            )));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::Domain(format!("wavelet dt must be positive, got {}", self.dt)));
        }
        Ok(())
    }

    /// Zero-phase Ricker wavelet with peak frequency `freq_hz`, sampled every
    /// `dt_ms` out to where it has decayed below 0.1% of the peak.
    pub fn ricker(freq_hz: f64, dt_ms: f64) -> Result<Self> {
        if !(freq_hz > 0.0 && dt_ms > 0.0) {
            return Err(Error::Domain("ricker needs positive frequency and dt".into()));
        }
        let half = ((1.5 / freq_hz) / (dt_ms * 1e-3)).ceil().max(1.0) as usize;
        let a = (std::f64::consts::PI * freq_hz).powi(2);
        let samples = (0..=2 * half)
            .map(|i| {
                let t = (i as f64 - half as f64) * dt_ms * 1e-3;
                (1.0 - 2.0 * a * t * t) * (-a * t * t).exp()
            })
            .collect();
        Self::new(samples, half, dt_ms)
    }

    /// A single unit spike.
    pub fn delta(dt: f64) -> Self {
        Wavelet {
            samples: vec![1.0],
            center_index: 0,
            dt,
        }
    }
}

/// Reads a wavelet CSV: `center_index,<n>` and `dt_ms,<dt>` lines followed by
/// an `index,amplitude` table.
pub fn read_wavelet(path: impl AsRef<Path>) -> Result<Wavelet> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let mut header = |key: &str| -> Result<String> {
        let line = lines
            .next()
            .ok_or_else(|| Error::Format(format!("wavelet file missing `{key}` line")))?;
        let (k, v) = line
            .split_once(',')
            .ok_or_else(|| Error::Format(format!("bad wavelet header line `{line}`")))?;
        if k.trim() != key {
            return Err(Error::Format(format!("expected `{key}`, found `{}`", k.trim())));
        }
        Ok(v.trim().to_string())
    };
    let center: usize = header("center_index")?
        .parse()
        .map_err(|e| Error::Format(format!("center_index: {e}")))?;
    let dt: f64 = header("dt_ms")?.parse().map_err(|e| Error::Format(format!("dt_ms: {e}")))?;
    let table = lines.collect::<Vec<_>>().join("\n");
    let mut rdr = csv::Reader::from_reader(table.as_bytes());
    let mut samples = Vec::new();
    for (expect, rec) in rdr.deserialize::<(usize, f64)>().enumerate() {
        let (idx, amp) = rec?;
        if idx != expect {
            return Err(Error::Format(format!("wavelet index {idx} out of order, expected {expect}")));
        }
        samples.push(amp);
    }
    Wavelet::new(samples, center, dt)
}

pub fn write_wavelet(path: impl AsRef<Path>, w: &Wavelet) -> Result<()> {
    let path = path.as_ref();
    let mut out = format!("center_index,{}\ndt_ms,{}\nindex,amplitude\n", w.center_index, w.dt);
    for (i, a) in w.samples.iter().enumerate() {
        out.push_str(&format!("{i},{a}\n"));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Normal-incidence reflection coefficients between consecutive samples.
pub fn reflectivity(ip: &[f64]) -> Result<Vec<f64>> {
    if ip.len() < 2 {
        return Err(Error::Domain("reflectivity needs at least two samples".into()));
    }
    if let Some(bad) = ip.iter().find(|&&x| !(x > 0.0) || !x.is_finite()) {
        return Err(Error::Domain(format!("impedance must be positive, got {bad}")));
    }
    Ok(ip.windows(2).map(|w| (w[1] - w[0]) / (w[1] + w[0])).collect())
}

/// Convolves a reflectivity series (placed at indices 0..) with the wavelet,
/// keeping `n_out` samples.
pub fn convolve(refl: &[f64], w: &Wavelet, n_out: usize) -> Vec<f64> {
    let mut out = vec![0.0; n_out];
    let c = w.center_index as isize;
    for (k, &r) in refl.iter().enumerate() {
        if r == 0.0 {
            continue;
        }
        for (m, &a) in w.samples.iter().enumerate() {
            let t = k as isize + m as isize - c;
            if t >= 0 && (t as usize) < n_out {
                out[t as usize] += r * a;
            }
        }
    }
    out
}

/// Synthetic seismic trace of an impedance trace.
pub fn synthesize_trace(ip: &[f32], w: &Wavelet) -> Result<Vec<f64>> {
    let nz = ip.len();
    if nz < 2 {
        return Ok(vec![0.0; nz]);
    }
    let ip64: Vec<f64> = ip.iter().map(|&x| x as f64).collect();
    Ok(convolve(&reflectivity(&ip64)?, w, nz))
}

/// Synthetic seismic volume of an impedance volume.
pub fn synthesize(ip: &Volume, w: &Wavelet) -> Result<Volume> {
    let grid = *ip.grid();
    if (w.dt - grid.dz).abs() > 1e-9 * grid.dz {
        return Err(Error::Domain(format!(
            "wavelet dt {} ms differs from grid dz {} ms",
            w.dt, grid.dz
        )));
    }
    let nz = grid.nz;
    let traces: Vec<Vec<f64>> = ip
        .values()
        .par_chunks(nz)
        .map(|t| synthesize_trace(t, w))
        .collect::<Result<_>>()?;
    let values: Vec<f64> = traces.into_iter().flatten().collect();
    Volume::from_f64(grid, &values)
}

/// Pearson correlation; zero when either input has no variance.
pub fn pearson<A, B>(a: A, b: B) -> f64
where
    A: IntoIterator<Item = f64>,
    B: IntoIterator<Item = f64>,
{
    let (mut n, mut sa, mut sb) = (0.0, 0.0, 0.0);
    let pairs: Vec<(f64, f64)> = a.into_iter().zip(b).collect();
    for &(x, y) in &pairs {
        n += 1.0;
        sa += x;
        sb += y;
    }
    if n < 2.0 {
        return 0.0;
    }
    let (ma, mb) = (sa / n, sb / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for &(x, y) in &pairs {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return 0.0;
    }
    (sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0)
}

pub fn trace_cc(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    pearson(a.iter().copied(), b.iter().copied())
}

pub fn trace_cc_f32(a: &[f32], b: &[f32]) -> f64 {
    pearson(a.iter().map(|&x| x as f64), b.iter().map(|&x| x as f64))
}

/// Correlation over all cells jointly.
pub fn global_cc(a: &Volume, b: &Volume) -> Result<f64> {
    if !a.is_congruent(b) {
        return Err(Error::Domain("global_cc needs congruent volumes".into()));
    }
    Ok(pearson(
        a.values().iter().map(|&x| x as f64),
        b.values().iter().map(|&x| x as f64),
    ))
}

/// Trace-by-trace correlations, ordered by trace index (i fastest).
pub fn trace_ccs(a: &Volume, b: &Volume) -> Result<Vec<f64>> {
    if !a.is_congruent(b) {
        return Err(Error::Domain("trace correlation needs congruent volumes".into()));
    }
    let nz = a.grid().nz;
    Ok(a.values()
        .par_chunks(nz)
        .zip(b.values().par_chunks(nz))
        .map(|(x, y)| trace_cc_f32(x, y))
        .collect())
}
