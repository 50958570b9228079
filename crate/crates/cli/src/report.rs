//! Plot-ready CSVs and summaries.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use gsuq::grid::{Volume, WellSet};
use gsuq::nab::{PosteriorEnsemble, QuantileMaps};
use gsuq::pso::{best_so_far, SampledModel};
use gsuq::{Error, Result};

use crate::pipeline::create_dir;

pub const HISTOGRAM_BINS: usize = 30;

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(text.as_bytes()))
        .map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })
}

/// Cell-wise min and max over an ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    pub min: Volume,
    pub max: Volume,
}

impl Envelope {
    pub fn of(ensemble: &[Volume]) -> Result<Envelope> {
        let first = ensemble
            .first()
            .ok_or_else(|| Error::Domain("envelope of an empty ensemble".into()))?;
        let mut lo = first.clone();
        let mut hi = first.clone();
        for v in &ensemble[1..] {
            if !v.is_congruent(first) {
                return Err(Error::Consistency("ensemble members differ in grid".into()));
            }
            for ((l, h), &x) in lo.values_mut().iter_mut().zip(hi.values_mut()).zip(v.values()) {
                *l = l.min(x);
                *h = h.max(x);
            }
        }
        Ok(Envelope { min: lo, max: hi })
    }
}

/// Diagnostics of one multi-scale evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalRecord {
    pub global_cc: f64,
    pub mean_trace_cc: f64,
    pub misfit: f64,
}

pub fn write_evaluations(path: &Path, records: &BTreeMap<usize, EvalRecord>) -> Result<()> {
    let mut out = String::from("id,global_cc,mean_trace_cc,misfit\n");
    for (id, r) in records {
        out.push_str(&format!("{id},{},{},{}\n", r.global_cc, r.mean_trace_cc, r.misfit));
    }
    write_text(path, &out)
}

pub fn read_evaluations(path: &Path) -> Result<BTreeMap<usize, EvalRecord>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut out = BTreeMap::new();
    for rec in rdr.deserialize::<(usize, f64, f64, f64)>() {
        let (id, global_cc, mean_trace_cc, misfit) = rec?;
        out.insert(
            id,
            EvalRecord {
                global_cc,
                mean_trace_cc,
                misfit,
            },
        );
    }
    Ok(out)
}

/// Two-sample Kolmogorov-Smirnov statistic. An empty sample is at distance 1.
pub fn ks_distance(a: &[f64], b: &[f64]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return 1.0;
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Common-bin histograms, as fractions of each series.
pub fn write_histograms(path: &Path, series: &[(&str, Vec<f64>)]) -> Result<()> {
    let mut out = String::from("lo,hi");
    for (name, _) in series {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    let all = series.iter().flat_map(|(_, v)| v.iter().copied());
    let (lo, hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), x| (l.min(x), h.max(x)));
    if lo.is_finite() {
        let n = if hi > lo { HISTOGRAM_BINS } else { 1 };
        let width = (hi - lo) / n as f64;
        let counts: Vec<Vec<usize>> = series
            .iter()
            .map(|(_, v)| {
                let mut c = vec![0; n];
                for &x in v {
                    let b = if width > 0.0 { ((x - lo) / width) as usize } else { 0 };
                    c[b.min(n - 1)] += 1;
                }
                c
            })
            .collect();
        for b in 0..n {
            let edge = |e: usize| if e == n { hi } else { lo + width * e as f64 };
            out.push_str(&format!("{},{}", edge(b), edge(b + 1)));
            for (s, (_, v)) in series.iter().enumerate() {
                let f = if v.is_empty() { 0.0 } else { counts[s][b] as f64 / v.len() as f64 };
                out.push_str(&format!(",{f}"));
            }
            out.push('\n');
        }
    }
    write_text(path, &out)
}

/// True blind-well logs beside the envelope and every final realization.
pub fn write_conventional_wells(path: &Path, blind: &WellSet, env: &Envelope, ensemble: &[Volume]) -> Result<()> {
    let mut out = String::from("well,i,j,k,true_ip,min,max");
    for r in 0..ensemble.len() {
        out.push_str(&format!(",r{r:03}"));
    }
    out.push('\n');
    let grid = *env.min.grid();
    for w in &blind.wells {
        for s in &w.samples {
            let idx = grid.index(w.i, w.j, s.k);
            out.push_str(&format!(
                "{},{},{},{},{},{},{}",
                w.name, w.i, w.j, s.k, s.ip, env.min.values()[idx], env.max.values()[idx]
            ));
            for v in ensemble {
                out.push_str(&format!(",{}", v.values()[idx]));
            }
            out.push('\n');
        }
    }
    write_text(path, &out)
}

pub struct ReportInputs<'a> {
    pub names: &'a [String],
    pub history: &'a [SampledModel],
    pub weights: Option<&'a PosteriorEnsemble>,
    pub evaluations: &'a BTreeMap<usize, EvalRecord>,
    pub maps: Option<&'a QuantileMaps>,
    pub blind: &'a WellSet,
    pub histograms: Vec<(&'a str, Vec<f64>)>,
    pub coverage: Option<f64>,
}

/// Writes the multi-scale report into `dir`.
pub fn emit_report(dir: &Path, r: &ReportInputs) -> Result<()> {
    create_dir(dir)?;
    let weight = |id: usize| r.weights.map_or(0.0, |w| w.weight(id));

    let mut misfit = String::from("id,iteration,misfit,best_so_far\n");
    for (s, b) in r.history.iter().zip(best_so_far(r.history)) {
        misfit.push_str(&format!("{},{},{},{}\n", s.id, s.iteration, s.m, b));
    }
    write_text(&dir.join("misfit_vs_iteration.csv"), &misfit)?;

    let pdir = dir.join("parameter_vs_iteration");
    create_dir(&pdir)?;
    for (d, name) in r.names.iter().enumerate() {
        let mut out = String::from("id,iteration,value\n");
        for s in r.history {
            out.push_str(&format!("{},{},{}\n", s.id, s.iteration, s.position.values[d]));
        }
        write_text(&pdir.join(format!("{name}.csv")), &out)?;
    }

    let mut joined = String::from("id,iteration");
    for name in r.names {
        joined.push(',');
        joined.push_str(name);
    }
    joined.push_str(",misfit,weight\n");
    for s in r.history {
        joined.push_str(&format!("{},{}", s.id, s.iteration));
        for x in &s.position.values {
            joined.push_str(&format!(",{x}"));
        }
        joined.push_str(&format!(",{},{}\n", s.m, weight(s.id)));
    }
    write_text(&dir.join("parameter_vs_misfit.csv"), &joined)?;

    let mut wells = String::from("well,i,j,k,true_ip,p10,p50,p90\n");
    if let Some(maps) = r.maps {
        let grid = *maps.p50.grid();
        for w in &r.blind.wells {
            for s in &w.samples {
                let idx = grid.index(w.i, w.j, s.k);
                wells.push_str(&format!(
                    "{},{},{},{},{},{},{},{}\n",
                    w.name,
                    w.i,
                    w.j,
                    s.k,
                    s.ip,
                    maps.p10.values()[idx],
                    maps.p50.values()[idx],
                    maps.p90.values()[idx]
                ));
            }
        }
    }
    write_text(&dir.join("blind_wells.csv"), &wells)?;
    write_histograms(&dir.join("histograms.csv"), &r.histograms)?;

    let mut summary = format!("models evaluated: {}\n", r.history.len());
    if let Some(best) = r.history.iter().min_by(|a, b| a.m.total_cmp(&b.m)) {
        summary.push_str(&format!("lowest misfit: {} (model {})\n", best.m, best.id));
    }
    if let Some(w) = r.weights {
        let map = w.map_id;
        summary.push_str(&format!("MAP model: {map} (weight {})\n", w.weight(map)));
        if let Some(s) = r.history.iter().find(|s| s.id == map) {
            for (name, x) in r.names.iter().zip(&s.position.values) {
                summary.push_str(&format!("  {name} = {x}\n"));
            }
        }
        if let Some(e) = r.evaluations.get(&map) {
            summary.push_str(&format!(
                "MAP final global CC: {}\nMAP final mean trace CC: {}\n",
                e.global_cc, e.mean_trace_cc
            ));
        }
    }
    if let Some(c) = r.coverage {
        summary.push_str(&format!("blind-well P10-P90 coverage: {c}\n"));
    }
    write_text(&dir.join("summary.txt"), &summary)
}
