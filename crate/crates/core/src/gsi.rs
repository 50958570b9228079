//! Global stochastic inversion: simulate an ensemble, keep the best-matching
//! trace at every column, and co-simulate the next ensemble from it.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dss::{simulate_each, SecondaryData, SimulationPlan};
use crate::error::{Error, Result};
use crate::forward::{global_cc, synthesize, trace_ccs, Wavelet};
use crate::grid::{insert_trace, Volume};
use crate::rng::derive_seed;

/// Best-trace volumes assembled from one ensemble.
#[derive(Debug, Clone)]
pub struct AuxiliaryVolumes {
    pub best_ip: Volume,
    /// Per-trace correlation of the winning synthetic, repeated down the column.
    pub best_cc: Volume,
    /// The same correlations in trace order.
    pub trace_cc: Vec<f64>,
    /// Index of the winning realization per trace.
    pub winner: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GsiConfig {
    pub n_iterations: usize,
    pub ensemble_size: usize,
    pub cc_stop: f64,
    /// Keep every member of the final ensemble in the report.
    pub persist: bool,
}

impl Default for GsiConfig {
    fn default() -> Self {
        GsiConfig {
            n_iterations: 6,
            ensemble_size: 32,
            cc_stop: 0.99,
            persist: true,
        }
    }
}

impl GsiConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_iterations == 0 || self.ensemble_size == 0 {
            return Err(Error::Domain("GSI needs at least one iteration and one realization".into()));
        }
        // cc_stop = 0 is accepted and stops after the first iteration.
        if !(0.0..=1.0).contains(&self.cc_stop) {
            return Err(Error::Domain(format!("cc_stop {} outside [0, 1]", self.cc_stop)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationStats {
    pub iter: usize,
    pub global_cc_best: f64,
    pub mean_trace_cc: f64,
    pub median_trace_cc: f64,
}

#[derive(Debug, Clone)]
pub struct GsiReport {
    pub iterations: Vec<IterationStats>,
    /// Final ensemble; empty unless `persist` was set.
    pub ensemble: Vec<Volume>,
    pub ensemble_mean: Volume,
    pub ensemble_variance: Volume,
    pub best_ip: Volume,
    pub best_synthetic: Volume,
    pub best_trace_cc: Vec<f64>,
}

impl GsiReport {
    pub fn final_stats(&self) -> &IterationStats {
        self.iterations.last().expect("report has at least one iteration")
    }

    pub fn write_diagnostics(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::from("iter,global_cc_best,mean_trace_cc\n");
        for s in &self.iterations {
            out.push_str(&format!("{},{},{}\n", s.iter, s.global_cc_best, s.mean_trace_cc));
        }
        std::fs::File::create(path)
            .and_then(|mut f| f.write_all(out.as_bytes()))
            .map_err(|e| Error::io(path, e))
    }
}

/// Scores every realization trace by trace and keeps the argmax. Ties go to
/// the lowest realization index.
pub fn select_best(ensemble: &[Volume], observed: &Volume, w: &Wavelet) -> Result<AuxiliaryVolumes> {
    let first = ensemble
        .first()
        .ok_or_else(|| Error::Domain("cannot select from an empty ensemble".into()))?;
    let scores: Vec<Vec<f64>> = ensemble
        .par_iter()
        .map(|v| {
            if !v.is_congruent(observed) {
                return Err(Error::Consistency("ensemble member and observed seismic differ in grid".into()));
            }
            trace_ccs(observed, &synthesize(v, w)?)
        })
        .collect::<Result<_>>()?;
    let grid = *first.grid();
    let n_traces = grid.n_traces();
    let mut best_ip = Volume::zeros(grid);
    let mut best_cc = Volume::zeros(grid);
    let mut trace_cc = Vec::with_capacity(n_traces);
    let mut winner = Vec::with_capacity(n_traces);
    for (t, id) in grid.trace_ids().enumerate() {
        let mut r_best = 0;
        for r in 1..scores.len() {
            if scores[r][t] > scores[r_best][t] {
                r_best = r;
            }
        }
        let cc = scores[r_best][t];
        insert_trace(&mut best_ip, id, ensemble[r_best].trace(id))?;
        best_cc.trace_mut(id).fill(cc as f32);
        trace_cc.push(cc);
        winner.push(r_best);
    }
    Ok(AuxiliaryVolumes {
        best_ip,
        best_cc,
        trace_cc,
        winner,
    })
}

/// Cell-wise mean and population variance of an ensemble.
pub fn ensemble_moments(ensemble: &[Volume]) -> Result<(Volume, Volume)> {
    let first = ensemble
        .first()
        .ok_or_else(|| Error::Domain("empty ensemble has no moments".into()))?;
    let grid = *first.grid();
    let n = grid.n_cells();
    let mut mean = vec![0.0f64; n];
    let mut m2 = vec![0.0f64; n];
    for (r, v) in ensemble.iter().enumerate() {
        if v.grid() != &grid {
            return Err(Error::Consistency("ensemble members differ in grid".into()));
        }
        let k = (r + 1) as f64;
        for (i, &x) in v.values().iter().enumerate() {
            let x = x as f64;
            let d = x - mean[i];
            mean[i] += d / k;
            m2[i] += d * (x - mean[i]);
        }
    }
    let var: Vec<f64> = m2.iter().map(|s| s / ensemble.len() as f64).collect();
    Ok((Volume::from_f64(grid, &mean)?, Volume::from_f64(grid, &var)?))
}

fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Runs the inversion loop. Iteration 1 is unconditional on seismic; later
/// iterations co-simulate with the previous best-trace volumes. Wells
/// condition every iteration.
pub fn run_gsi(plan: &SimulationPlan, observed: &Volume, w: &Wavelet, cfg: &GsiConfig) -> Result<GsiReport> {
    cfg.validate()?;
    plan.validate()?;
    if plan.secondary.is_some() {
        return Err(Error::Domain("the first GSI iteration takes no secondary volume".into()));
    }
    if observed.grid() != &plan.grid {
        return Err(Error::Consistency("observed seismic does not match the simulation grid".into()));
    }
    let mut plan = plan.clone();
    plan.n_realizations = cfg.ensemble_size;
    let base_seed = plan.seed;
    let mut iterations = Vec::new();
    let mut last: Option<(Vec<Volume>, AuxiliaryVolumes, Volume)> = None;
    for it in 1..=cfg.n_iterations {
        plan.seed = derive_seed(base_seed, it as u64);
        let mut ensemble = Vec::with_capacity(cfg.ensemble_size);
        let mut first_err = None;
        for (r, out) in simulate_each(&plan)?.into_iter().enumerate() {
            match out {
                Ok(v) => ensemble.push(v),
                Err(e) => {
                    log::warn!("iteration {it}: dropping realization {r}: {e}");
                    first_err.get_or_insert(e);
                }
            }
        }
        if ensemble.is_empty() {
            return Err(first_err.expect("an empty ensemble implies a failure"));
        }
        let aux = select_best(&ensemble, observed, w)?;
        let best_synthetic = synthesize(&aux.best_ip, w)?;
        let stats = IterationStats {
            iter: it,
            global_cc_best: global_cc(observed, &best_synthetic)?,
            mean_trace_cc: aux.trace_cc.iter().sum::<f64>() / aux.trace_cc.len() as f64,
            median_trace_cc: median(&aux.trace_cc),
        };
        log::info!(
            "iteration {it}: global CC {:.4}, mean trace CC {:.4}",
            stats.global_cc_best,
            stats.mean_trace_cc
        );
        iterations.push(stats);
        let stop = stats.global_cc_best >= cfg.cc_stop;
        plan.secondary = Some(SecondaryData {
            volume: aux.best_ip.clone(),
            cc: aux.best_cc.clone(),
        });
        last = Some((ensemble, aux, best_synthetic));
        if stop {
            break;
        }
    }
    let (ensemble, aux, best_synthetic) = last.expect("at least one iteration runs");
    let (ensemble_mean, ensemble_variance) = ensemble_moments(&ensemble)?;
    Ok(GsiReport {
        iterations,
        ensemble: if cfg.persist { ensemble } else { Vec::new() },
        ensemble_mean,
        ensemble_variance,
        best_ip: aux.best_ip,
        best_synthetic,
        best_trace_cc: aux.trace_cc,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dss::TargetDistribution;
    use crate::forward::trace_cc;
    use crate::grid::{Grid3, WellSet};
    use crate::kriging::Neighborhood;
    use crate::rng::rng_from;
    use crate::variogram::VariogramModel;
    use rand::Rng;

    fn grid() -> Grid3 {
        Grid3::new(2, 2, 12, 1.0, 1.0, 1.0).unwrap()
    }

    fn random_volume(seed: u64) -> Volume {
        let mut rng = rng_from(seed);
        let g = grid();
        let v: Vec<f32> = (0..g.n_cells()).map(|_| rng.random_range(3000.0..9000.0)).collect();
        Volume::new(g, v).unwrap()
    }

    fn wavelet() -> Wavelet {
        Wavelet::ricker(60.0, 1.0).unwrap()
    }

    fn plan(seed: u64, true_ip: &Volume) -> SimulationPlan {
        let samples: Vec<f64> = true_ip.values().iter().map(|&x| x as f64).collect();
        let target = TargetDistribution::from_samples(&samples).unwrap();
        SimulationPlan {
            grid: *true_ip.grid(),
            seed,
            n_realizations: 1,
            neighborhood: Neighborhood {
                max_data: 8,
                search_radii: None,
            },
            model: VariogramModel::spherical(3.0, 4.0, target.variance()).unwrap(),
            target,
            conditioning: WellSet::default(),
            secondary: None,
        }
    }

    #[test]
    fn single_member_is_its_own_best() {
        let v = random_volume(1);
        let obs = synthesize(&random_volume(2), &wavelet()).unwrap();
        let aux = select_best(std::slice::from_ref(&v), &obs, &wavelet()).unwrap();
        assert_eq!(aux.best_ip, v);
        let ccs = trace_ccs(&obs, &synthesize(&v, &wavelet()).unwrap()).unwrap();
        assert_eq!(aux.trace_cc, ccs);
        for (t, id) in grid().trace_ids().enumerate() {
            assert!(aux.best_cc.trace(id).iter().all(|&c| c == ccs[t] as f32));
        }
    }

    #[test]
    fn perfect_member_wins_everywhere() {
        let truth = random_volume(3);
        let obs = synthesize(&truth, &wavelet()).unwrap();
        let ens = vec![random_volume(4), truth.clone(), random_volume(5)];
        let aux = select_best(&ens, &obs, &wavelet()).unwrap();
        assert_eq!(aux.best_ip, truth);
        assert!(aux.trace_cc.iter().all(|&c| (c - 1.0).abs() < 1e-12));
    }

    #[test]
    fn argmax_matches_enumeration() {
        let w = wavelet();
        let obs = synthesize(&random_volume(10), &w).unwrap();
        let ens: Vec<Volume> = (11..14).map(random_volume).collect();
        let aux = select_best(&ens, &obs, &w).unwrap();
        for (t, id) in grid().trace_ids().enumerate() {
            let o: Vec<f64> = obs.trace(id).iter().map(|&x| x as f64).collect();
            let mut best = (f64::NEG_INFINITY, 0);
            for (r, v) in ens.iter().enumerate() {
                // Volumes store f32, so round the oracle's synthetic the same way.
                let s: Vec<f64> = crate::forward::synthesize_trace(v.trace(id), &w)
                    .unwrap()
                    .into_iter()
                    .map(|x| x as f32 as f64)
                    .collect();
                let cc = trace_cc(&o, &s);
                if cc > best.0 {
                    best = (cc, r);
                }
            }
            assert_eq!(aux.winner[t], best.1);
            assert_eq!(aux.trace_cc[t], best.0);
            assert_eq!(aux.best_ip.trace(id), ens[best.1].trace(id));
        }
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let v = random_volume(6);
        let obs = synthesize(&random_volume(7), &wavelet()).unwrap();
        let aux = select_best(&[v.clone(), v.clone(), v], &obs, &wavelet()).unwrap();
        assert!(aux.winner.iter().all(|&r| r == 0));
    }

    #[test]
    fn zero_threshold_stops_after_one_iteration() {
        let truth = random_volume(8);
        let obs = synthesize(&truth, &wavelet()).unwrap();
        let cfg = GsiConfig {
            n_iterations: 4,
            ensemble_size: 3,
            cc_stop: 0.0,
            persist: true,
        };
        let rep = run_gsi(&plan(1, &truth), &obs, &wavelet(), &cfg).unwrap();
        assert_eq!(rep.iterations.len(), 1);
        assert_eq!(rep.ensemble.len(), 3);
    }

    #[test]
    fn run_is_deterministic_and_reported() {
        let truth = random_volume(9);
        let obs = synthesize(&truth, &wavelet()).unwrap();
        let cfg = GsiConfig {
            n_iterations: 3,
            ensemble_size: 4,
            cc_stop: 1.0,
            persist: false,
        };
        let a = run_gsi(&plan(5, &truth), &obs, &wavelet(), &cfg).unwrap();
        let b = run_gsi(&plan(5, &truth), &obs, &wavelet(), &cfg).unwrap();
        assert_eq!(a.iterations, b.iterations);
        assert_eq!(a.best_ip, b.best_ip);
        assert_eq!(a.ensemble_mean, b.ensemble_mean);
        assert_eq!(a.iterations.len(), 3);
        assert!(a.ensemble.is_empty());
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("gsi.csv");
        a.write_diagnostics(&p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.starts_with("iter,global_cc_best,mean_trace_cc\n"));
    }

    #[test]
    fn rejects_secondary_on_entry() {
        let truth = random_volume(9);
        let obs = synthesize(&truth, &wavelet()).unwrap();
        let mut p = plan(5, &truth);
        p.secondary = Some(SecondaryData {
            volume: truth.clone(),
            cc: Volume::zeros(grid()),
        });
        assert!(run_gsi(&p, &obs, &wavelet(), &GsiConfig::default()).is_err());
    }

    #[test]
    fn moments_of_two_members() {
        let g = grid();
        let a = Volume::filled(g, 2.0);
        let b = Volume::filled(g, 4.0);
        let (m, v) = ensemble_moments(&[a, b]).unwrap();
        assert!(m.values().iter().all(|&x| x == 3.0));
        assert!(v.values().iter().all(|&x| x == 1.0));
    }
}
