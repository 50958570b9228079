//! Regular grids, volumes, wells and their on-disk formats.
//!
//! Volumes are stored k-fastest, then i, then j, so every trace (i, j) is a
//! contiguous slice of `nz` samples.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"GSUQ";
const FORMAT_VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 3 * 4 + 3 * 4;

/// Regular 3D grid. Horizontal cell sizes are meters, vertical is milliseconds
/// of two-way time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid3 {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub dx: f64,
    pub dy: f64,
    pub dz: f64,
}

impl Grid3 {
    pub fn new(nx: usize, ny: usize, nz: usize, dx: f64, dy: f64, dz: f64) -> Result<Self> {
        let grid = Grid3 {
            nx,
            ny,
            nz,
            dx,
            dy,
            dz,
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if self.nx == 0 || self.ny == 0 || self.nz == 0 {
            return Err(Error::Format(format!(
                "grid dimensions must be positive, got {}x{}x{}",
                self.nx, self.ny, self.nz
            )));
        }
        for (name, d) in [("dx", self.dx), ("dy", self.dy), ("dz", self.dz)] {
            if !(d.is_finite() && d > 0.0) {
                return Err(Error::Format(format!("cell size {name} must be positive, got {d}")));
            }
        }
        Ok(())
    }

    pub fn n_cells(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    /// Number of traces (CMP locations).
    pub fn n_traces(&self) -> usize {
        self.nx * self.ny
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        k + self.nz * (i + self.nx * j)
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> (usize, usize, usize) {
        let k = idx % self.nz;
        let col = idx / self.nz;
        (col % self.nx, col / self.nx, k)
    }

    /// Physical position of a cell center (m, m, ms).
    #[inline]
    pub fn position(&self, i: usize, j: usize, k: usize) -> [f64; 3] {
        [i as f64 * self.dx, j as f64 * self.dy, k as f64 * self.dz]
    }

    pub fn trace_ids(&self) -> impl Iterator<Item = TraceId> + '_ {
        (0..self.ny).flat_map(move |j| (0..self.nx).map(move |i| TraceId { i, j }))
    }

    #[inline]
    pub fn trace_index(&self, t: TraceId) -> usize {
        t.i + self.nx * t.j
    }

    pub fn check_trace(&self, t: TraceId) -> Result<()> {
        if t.i >= self.nx || t.j >= self.ny {
            return Err(Error::Index(format!(
                "trace ({}, {}) outside {}x{} grid",
                t.i, t.j, self.nx, self.ny
            )));
        }
        Ok(())
    }
}

/// Column address of a trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TraceId {
    pub i: usize,
    pub j: usize,
}

/// Scalar field on a [`Grid3`].
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    grid: Grid3,
    values: Vec<f32>,
}

impl Volume {
    pub fn new(grid: Grid3, values: Vec<f32>) -> Result<Self> {
        grid.validate()?;
        if values.len() != grid.n_cells() {
            return Err(Error::Data(format!(
                "volume has {} values, grid needs {}",
                values.len(),
                grid.n_cells()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite value at cell {pos}")));
        }
        Ok(Volume { grid, values })
    }

    pub fn filled(grid: Grid3, value: f32) -> Self {
        Volume {
            grid,
            values: vec![value; grid.n_cells()],
        }
    }

    pub fn zeros(grid: Grid3) -> Self {
        Self::filled(grid, 0.0)
    }

    /// Builds a volume from f64 values, rounding to f32.
    pub fn from_f64(grid: Grid3, values: &[f64]) -> Result<Self> {
        Self::new(grid, values.iter().map(|&v| v as f32).collect())
    }

    pub fn grid(&self) -> &Grid3 {
        &self.grid
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f32] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f32 {
        self.values[self.grid.index(i, j, k)]
    }

    pub fn set(&mut self, i: usize, j: usize, k: usize, v: f32) {
        let idx = self.grid.index(i, j, k);
        self.values[idx] = v;
    }

    pub fn trace(&self, t: TraceId) -> &[f32] {
        let start = self.grid.index(t.i, t.j, 0);
        &self.values[start..start + self.grid.nz]
    }

    pub fn trace_mut(&mut self, t: TraceId) -> &mut [f32] {
        let start = self.grid.index(t.i, t.j, 0);
        let nz = self.grid.nz;
        &mut self.values[start..start + nz]
    }

    pub fn is_congruent(&self, other: &Volume) -> bool {
        self.grid == other.grid
    }
}

/// Copies the k-ordered column at `t`.
pub fn extract_trace(v: &Volume, t: TraceId) -> Result<Vec<f32>> {
    v.grid.check_trace(t)?;
    Ok(v.trace(t).to_vec())
}

/// Writes a column back into `v`.
pub fn insert_trace(v: &mut Volume, t: TraceId, trace: &[f32]) -> Result<()> {
    v.grid.check_trace(t)?;
    if trace.len() != v.grid.nz {
        return Err(Error::Index(format!(
            "trace has {} samples, grid has nz={}",
            trace.len(),
            v.grid.nz
        )));
    }
    v.trace_mut(t).copy_from_slice(trace);
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VolumeStats {
    pub mean: f64,
    pub variance: f64,
    pub min: f64,
    pub max: f64,
}

/// Mean, population variance and range of a sample set.
pub fn sample_stats(values: impl IntoIterator<Item = f64>) -> Option<VolumeStats> {
    let mut n = 0usize;
    let mut mean = 0.0;
    let mut m2 = 0.0;
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for x in values {
        n += 1;
        let delta = x - mean;
        mean += delta / n as f64;
        m2 += delta * (x - mean);
        min = min.min(x);
        max = max.max(x);
    }
    (n > 0).then(|| VolumeStats {
        mean: mean.clamp(min, max),
        variance: (m2 / n as f64).max(0.0),
        min,
        max,
    })
}

pub fn volume_stats(v: &Volume) -> VolumeStats {
    sample_stats(v.values.iter().map(|&x| x as f64)).expect("volumes are never empty")
}

/// Writes a volume in the GSUQ binary format.
pub fn write_volume(path: impl AsRef<Path>, v: &Volume) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(&encode_volume(v)).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn encode_volume(v: &Volume) -> Vec<u8> {
    let g = &v.grid;
    let mut buf = Vec::with_capacity(HEADER_LEN + 4 * v.values.len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    for n in [g.nx, g.ny, g.nz] {
        buf.extend_from_slice(&(n as u32).to_le_bytes());
    }
    for d in [g.dx, g.dy, g.dz] {
        buf.extend_from_slice(&(d as f32).to_le_bytes());
    }
    for x in &v.values {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    buf
}

pub fn read_volume(path: impl AsRef<Path>) -> Result<Volume> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_volume(&bytes)
}

pub fn decode_volume(bytes: &[u8]) -> Result<Volume> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format(format!(
            "header needs {HEADER_LEN} bytes, file has {}",
            bytes.len()
        )));
    }
    if &bytes[0..4] != MAGIC {
        return Err(Error::Format("bad magic, expected GSUQ".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported format version {version}")));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
    let f32_at = |o: usize| f32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let (nx, ny, nz) = (u32_at(6), u32_at(10), u32_at(14));
    let (dx, dy, dz) = (f32_at(18), f32_at(22), f32_at(26));
    let grid = Grid3::new(nx, ny, nz, dx as f64, dy as f64, dz as f64)?;
    let expected = grid
        .n_cells()
        .checked_mul(4)
        .ok_or_else(|| Error::Format("grid too large".into()))?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != expected {
        return Err(Error::Truncated {
            expected,
            found: payload.len(),
        });
    }
    let values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Volume::new(grid, values)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WellSample {
    pub k: usize,
    pub ip: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Well {
    pub name: String,
    pub i: usize,
    pub j: usize,
    pub samples: Vec<WellSample>,
}

impl Well {
    pub fn trace(&self) -> TraceId {
        TraceId {
            i: self.i,
            j: self.j,
        }
    }
}

/// Impedance logs snapped to grid columns.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WellSet {
    pub wells: Vec<Well>,
}

#[derive(Debug, Serialize, Deserialize)]
struct WellRow {
    well: String,
    i: usize,
    j: usize,
    k: usize,
    ip: f64,
}

impl WellSet {
    pub fn new(wells: Vec<Well>) -> Self {
        WellSet { wells }
    }

    pub fn is_empty(&self) -> bool {
        self.wells.iter().all(|w| w.samples.is_empty())
    }

    pub fn n_samples(&self) -> usize {
        self.wells.iter().map(|w| w.samples.len()).sum()
    }

    pub fn names(&self) -> Vec<&str> {
        self.wells.iter().map(|w| w.name.as_str()).collect()
    }

    pub fn get(&self, name: &str) -> Option<&Well> {
        self.wells.iter().find(|w| w.name == name)
    }

    /// Every sample as `(cell index, ip)`.
    pub fn cells(&self, grid: &Grid3) -> impl Iterator<Item = (usize, f64)> + '_ {
        let grid = *grid;
        self.wells.iter().flat_map(move |w| {
            w.samples
                .iter()
                .map(move |s| (grid.index(w.i, w.j, s.k), s.ip))
        })
    }

    pub fn ip_values(&self) -> Vec<f64> {
        self.wells
            .iter()
            .flat_map(|w| w.samples.iter().map(|s| s.ip))
            .collect()
    }

    /// Splits into (kept, removed) by well name.
    pub fn partition(&self, names: &[String]) -> (WellSet, WellSet) {
        let (removed, kept): (Vec<Well>, Vec<Well>) = self
            .wells
            .iter()
            .cloned()
            .partition(|w| names.iter().any(|n| n == &w.name));
        (WellSet::new(kept), WellSet::new(removed))
    }

    pub fn validate(&self, grid: &Grid3) -> Result<()> {
        for w in &self.wells {
            if w.i >= grid.nx || w.j >= grid.ny {
                return Err(Error::Index(format!(
                    "well {} at ({}, {}) outside grid",
                    w.name, w.i, w.j
                )));
            }
            let mut seen = vec![false; grid.nz];
            for s in &w.samples {
                if s.k >= grid.nz {
                    return Err(Error::Index(format!("well {} sample k={} outside grid", w.name, s.k)));
                }
                if seen[s.k] {
                    return Err(Error::Data(format!("well {} has two samples at k={}", w.name, s.k)));
                }
                seen[s.k] = true;
                if !(s.ip.is_finite() && s.ip > 0.0) {
                    return Err(Error::Data(format!(
                        "well {} sample k={} has non-positive ip {}",
                        w.name, s.k, s.ip
                    )));
                }
            }
        }
        for (a, w) in self.wells.iter().enumerate() {
            if self.wells[..a].iter().any(|o| o.name == w.name) {
                return Err(Error::Data(format!("duplicate well name {}", w.name)));
            }
        }
        Ok(())
    }

    /// Samples the column of `v` at every well as a new well set.
    pub fn sample_from(grid: &Grid3, v: &Volume, locations: &[(String, TraceId)]) -> WellSet {
        let wells = locations
            .iter()
            .map(|(name, t)| Well {
                name: name.clone(),
                i: t.i,
                j: t.j,
                samples: v
                    .trace(*t)
                    .iter()
                    .enumerate()
                    .take(grid.nz)
                    .map(|(k, &ip)| WellSample { k, ip: ip as f64 })
                    .collect(),
            })
            .collect();
        WellSet::new(wells)
    }
}

/// Reads a `well,i,j,k,ip` CSV. Rows of one well need not be contiguous.
pub fn read_wells(path: impl AsRef<Path>) -> Result<WellSet> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::Reader::from_reader(file);
    let mut wells: Vec<Well> = Vec::new();
    for row in rdr.deserialize() {
        let row: WellRow = row?;
        match wells.iter_mut().find(|w| w.name == row.well) {
            Some(w) if w.i == row.i && w.j == row.j => w.samples.push(WellSample { k: row.k, ip: row.ip }),
            Some(w) => {
                return Err(Error::Data(format!(
                    "well {} changes column from ({}, {}) to ({}, {})",
                    w.name, w.i, w.j, row.i, row.j
                )))
            }
            None => wells.push(Well {
                name: row.well,
                i: row.i,
                j: row.j,
                samples: vec![WellSample { k: row.k, ip: row.ip }],
            }),
        }
    }
    Ok(WellSet::new(wells))
}

pub fn write_wells(path: impl AsRef<Path>, wells: &WellSet) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut wtr = csv::Writer::from_writer(file);
    for w in &wells.wells {
        for s in &w.samples {
            wtr.serialize(WellRow {
                well: w.name.clone(),
                i: w.i,
                j: w.j,
                k: s.k,
                ip: s.ip,
            })?;
        }
    }
    wtr.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;
    use proptest::prelude::*;
    use rand::Rng;

    fn grid(nx: usize, ny: usize, nz: usize) -> Grid3 {
        Grid3::new(nx, ny, nz, 25.0, 25.0, 4.0).unwrap()
    }

    #[test]
    fn small_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.gsuq");
        let v = Volume::filled(grid(2, 2, 2), 1.0);
        write_volume(&path, &v).unwrap();
        assert_eq!(read_volume(&path).unwrap(), v);
    }

    #[test]
    fn zero_dimension_header_is_a_format_error() {
        let mut bytes = encode_volume(&Volume::filled(grid(1, 1, 1), 1.0));
        bytes[6..10].copy_from_slice(&0u32.to_le_bytes());
        assert!(matches!(decode_volume(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn bad_magic_truncation_and_nan() {
        let v = Volume::filled(grid(2, 1, 2), 3.0);
        let mut bytes = encode_volume(&v);
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_volume(&bad), Err(Error::Format(_))));
        assert!(matches!(
            decode_volume(&bytes[..bytes.len() - 2]),
            Err(Error::Truncated { .. })
        ));
        let n = bytes.len();
        bytes[n - 4..].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(decode_volume(&bytes), Err(Error::Data(_))));
    }

    #[test]
    fn full_size_payload_is_byte_identical() {
        let g = grid(60, 70, 20);
        let mut rng = rng_from(11);
        let values: Vec<f32> = (0..g.n_cells()).map(|_| rng.random::<f32>()).collect();
        let v = Volume::new(g, values).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("big.gsuq");
        write_volume(&path, &v).unwrap();
        let raw = fs::read(&path).unwrap();
        let expected: Vec<u8> = v.values().iter().flat_map(|x| x.to_le_bytes()).collect();
        assert_eq!(&raw[HEADER_LEN..], expected.as_slice());
        let back = read_volume(&path).unwrap();
        assert_eq!(encode_volume(&back), raw);
    }

    #[test]
    fn stats_small_cases() {
        let s = volume_stats(&Volume::filled(grid(2, 2, 2), 5.0));
        assert_eq!((s.mean, s.variance, s.min, s.max), (5.0, 0.0, 5.0, 5.0));
        let v = Volume::new(grid(1, 1, 2), vec![4000.0, 8000.0]).unwrap();
        let s = volume_stats(&v);
        assert_eq!(s.mean, 6000.0);
        assert_eq!(s.variance, 4.0e6);
    }

    #[test]
    fn trace_extraction() {
        let v = Volume::new(grid(1, 1, 3), vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(extract_trace(&v, TraceId { i: 0, j: 0 }).unwrap(), vec![1.0, 2.0, 3.0]);
        assert!(matches!(extract_trace(&v, TraceId { i: 1, j: 0 }), Err(Error::Index(_))));

        let g = grid(3, 2, 4);
        let src = Volume::new(g, (0..g.n_cells()).map(|x| x as f32 + 1.0).collect()).unwrap();
        let t = TraceId { i: 2, j: 1 };
        let mut dst = Volume::zeros(g);
        insert_trace(&mut dst, t, &extract_trace(&src, t).unwrap()).unwrap();
        for tid in g.trace_ids() {
            let nonzero = dst.trace(tid).iter().any(|&x| x != 0.0);
            assert_eq!(nonzero, tid == t);
        }
    }

    #[test]
    fn traces_partition_the_volume() {
        let g = grid(4, 4, 8);
        let mut rng = rng_from(3);
        let v = Volume::new(g, (0..g.n_cells()).map(|_| rng.random::<f32>()).collect()).unwrap();
        let mut all: Vec<f32> = g
            .trace_ids()
            .flat_map(|t| extract_trace(&v, t).unwrap())
            .collect();
        let mut orig = v.values().to_vec();
        all.sort_by(f32::total_cmp);
        orig.sort_by(f32::total_cmp);
        assert_eq!(all, orig);
    }

    #[test]
    fn wells_csv_round_trip() {
        let g = grid(5, 5, 4);
        let wells = WellSet::new(vec![
            Well {
                name: "W1".into(),
                i: 1,
                j: 2,
                samples: vec![WellSample { k: 0, ip: 5000.0 }, WellSample { k: 3, ip: 6100.5 }],
            },
            Well {
                name: "W2".into(),
                i: 4,
                j: 0,
                samples: vec![WellSample { k: 1, ip: 7000.25 }],
            },
        ]);
        wells.validate(&g).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("wells.csv");
        write_wells(&path, &wells).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("well,i,j,k,ip\n"));
        assert_eq!(read_wells(&path).unwrap(), wells);
    }

    #[test]
    fn well_validation() {
        let g = grid(2, 2, 2);
        let mk = |i, k, ip| {
            WellSet::new(vec![Well {
                name: "W".into(),
                i,
                j: 0,
                samples: vec![WellSample { k, ip }],
            }])
        };
        assert!(mk(0, 1, 10.0).validate(&g).is_ok());
        assert!(mk(2, 0, 10.0).validate(&g).is_err());
        assert!(mk(0, 2, 10.0).validate(&g).is_err());
        assert!(mk(0, 0, -1.0).validate(&g).is_err());
    }

    proptest! {
        #[test]
        fn encode_decode_identity(nx in 1usize..5, ny in 1usize..5, nz in 1usize..6, seed in any::<u64>()) {
            let g = grid(nx, ny, nz);
            let mut rng = rng_from(seed);
            let v = Volume::new(g, (0..g.n_cells()).map(|_| rng.random_range(-1e4f32..1e4)).collect()).unwrap();
            let back = decode_volume(&encode_volume(&v)).unwrap();
            prop_assert_eq!(back, v);
        }

        #[test]
        fn stats_permutation_invariant(mut vals in proptest::collection::vec(-1e3f32..1e3, 1..40), seed in any::<u64>()) {
            let g = grid(vals.len(), 1, 1);
            let a = volume_stats(&Volume::new(g, vals.clone()).unwrap());
            let mut rng = rng_from(seed);
            for i in (1..vals.len()).rev() {
                let j = rng.random_range(0..=i);
                vals.swap(i, j);
            }
            let b = volume_stats(&Volume::new(g, vals).unwrap());
            prop_assert_eq!(a.min, b.min);
            prop_assert_eq!(a.max, b.max);
            prop_assert!((a.mean - b.mean).abs() < 1e-9 * (1.0 + a.mean.abs()));
            prop_assert!((a.variance - b.variance).abs() < 1e-9 * (1.0 + a.variance));
            prop_assert!(a.min <= a.mean && a.mean <= a.max);
        }
    }
}
