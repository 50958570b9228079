//! Particle swarm sampling of the metaparameter space.
//!
//! The swarm lives in the unit box; positions are mapped to parameter units
//! only when handed to the evaluator or written out. Every evaluation is kept
//! since the posterior approximation downstream needs the full history.

use std::io::Write;
use std::path::Path;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metaspace::{MetaVector, PriorBox};
use crate::rng::{derive_seed2, rng_from, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PsoConfig {
    pub swarm_size: usize,
    pub n_iterations: usize,
    pub inertia: f64,
    pub cognitive: f64,
    pub social: f64,
    /// Iterations (1-based) at which the worst particles are replaced.
    pub restart_at: Vec<usize>,
    pub restart_fraction: f64,
    pub seed: u64,
}

impl Default for PsoConfig {
    fn default() -> Self {
        PsoConfig {
            swarm_size: 10,
            n_iterations: 10,
            inertia: 0.72,
            cognitive: 1.49,
            social: 1.49,
            restart_at: Vec::new(),
            restart_fraction: 0.5,
            seed: 0,
        }
    }
}

impl PsoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.swarm_size == 0 || self.n_iterations == 0 {
            return Err(Error::Domain("PSO needs at least one particle and one iteration".into()));
        }
        if !(0.0..1.0).contains(&self.inertia) {
            return Err(Error::Domain(format!("inertia {} outside [0, 1)", self.inertia)));
        }
        if !(self.cognitive >= 0.0 && self.social >= 0.0) {
            return Err(Error::Domain("acceleration coefficients must be non-negative".into()));
        }
        if !(self.restart_fraction > 0.0 && self.restart_fraction <= 1.0) {
            return Err(Error::Domain(format!(
                "restart_fraction {} outside (0, 1]",
                self.restart_fraction
            )));
        }
        Ok(())
    }

    pub fn n_evaluations(&self) -> usize {
        self.swarm_size * self.n_iterations
    }
}

/// One particle, in unit-box coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Particle {
    pub position: Vec<f64>,
    pub velocity: Vec<f64>,
    pub best_position: Vec<f64>,
    /// `+inf` until the particle has been evaluated.
    pub best_m: f64,
    pub last_m: f64,
}

impl Particle {
    fn fresh(dim: usize, rng: &mut Rng) -> Self {
        let position: Vec<f64> = (0..dim).map(|_| rng.random::<f64>()).collect();
        Particle {
            best_position: position.clone(),
            position,
            velocity: vec![0.0; dim],
            best_m: f64::INFINITY,
            last_m: f64::INFINITY,
        }
    }

    /// Records a misfit at the current position; the personal best moves only
    /// on strict improvement.
    pub fn record(&mut self, m: f64) {
        self.last_m = m;
        if m < self.best_m {
            self.best_m = m;
            self.best_position.clone_from(&self.position);
        }
    }
}

/// A point evaluated during sampling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledModel {
    pub id: usize,
    pub position: MetaVector,
    pub m: f64,
    pub log_likelihood: f64,
    pub iteration: usize,
}

impl SampledModel {
    pub fn new(id: usize, position: MetaVector, m: f64, iteration: usize) -> Self {
        SampledModel {
            id,
            position,
            m,
            log_likelihood: -m,
            iteration,
        }
    }
}

/// Folds `x` back into `[0, 1]` by mirror reflection. Returns the folded
/// coordinate and whether the velocity sign flips.
pub fn reflect(x: f64) -> (f64, bool) {
    if (0.0..=1.0).contains(&x) {
        return (x, false);
    }
    let n = x.floor();
    let odd = (n as i64).rem_euclid(2) == 1;
    let y = if odd { n + 1.0 - x } else { x - n };
    (y.clamp(0.0, 1.0), odd)
}

#[derive(Debug, Clone)]
pub struct Swarm {
    pub particles: Vec<Particle>,
    /// Global best position and misfit, once something has been evaluated.
    pub gbest: Option<(Vec<f64>, f64)>,
}

impl Swarm {
    pub fn uniform(size: usize, dim: usize, rng: &mut Rng) -> Self {
        Swarm {
            particles: (0..size).map(|_| Particle::fresh(dim, rng)).collect(),
            gbest: None,
        }
    }

    /// Records one misfit per particle, in order, and refreshes the global
    /// best on strict improvement.
    pub fn record(&mut self, ms: &[f64]) {
        for (p, &m) in self.particles.iter_mut().zip(ms) {
            p.record(m);
            let better = match &self.gbest {
                Some((_, g)) => p.best_m < *g,
                None => p.best_m < f64::INFINITY,
            };
            if better {
                self.gbest = Some((p.best_position.clone(), p.best_m));
            }
        }
    }

    /// Replaces the `ceil(fraction * size)` particles with the highest last
    /// misfit by fresh uniform draws. Returns their indices.
    pub fn restart(&mut self, fraction: f64, rng: &mut Rng) -> Vec<usize> {
        let n = self.particles.len();
        let k = ((fraction * n as f64).ceil() as usize).clamp(1, n);
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            self.particles[b]
                .last_m
                .total_cmp(&self.particles[a].last_m)
                .then(a.cmp(&b))
        });
        let mut worst = order[..k].to_vec();
        worst.sort_unstable();
        let dim = self.particles[0].position.len();
        for &i in &worst {
            self.particles[i] = Particle::fresh(dim, rng);
        }
        worst
    }

    pub fn mean_pairwise_distance(&self) -> f64 {
        let n = self.particles.len();
        if n < 2 {
            return 0.0;
        }
        let mut sum = 0.0;
        for a in 0..n {
            for b in a + 1..n {
                let d2: f64 = self.particles[a]
                    .position
                    .iter()
                    .zip(&self.particles[b].position)
                    .map(|(x, y)| (x - y).powi(2))
                    .sum();
                sum += d2.sqrt();
            }
        }
        sum / (n * (n - 1) / 2) as f64
    }
}

/// Velocity and position update for every particle, with mirror reflection
/// at the unit-box faces.
pub fn step(particles: &mut [Particle], gbest: &[f64], cfg: &PsoConfig, rng: &mut Rng) {
    for p in particles.iter_mut() {
        for d in 0..p.position.len() {
            let (u1, u2): (f64, f64) = (rng.random(), rng.random());
            let x = p.position[d];
            let v = cfg.inertia * p.velocity[d]
                + cfg.cognitive * u1 * (p.best_position[d] - x)
                + cfg.social * u2 * (gbest[d] - x);
            let (y, flip) = reflect(x + v);
            p.position[d] = y;
            p.velocity[d] = if flip { -v } else { v };
        }
    }
}

fn evaluate_swarm<F>(
    prior: &PriorBox,
    swarm: &mut Swarm,
    evaluator: &F,
    first_id: usize,
    seed: u64,
) -> Result<Vec<f64>>
where
    F: Fn(usize, &MetaVector) -> Result<f64> + Sync,
{
    let dim = prior.dim();
    let outcomes: Vec<Result<(f64, Option<Particle>)>> = swarm
        .particles
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let id = first_id + i;
            match evaluator(id, &prior.denormalize(&p.position)) {
                Ok(m) => Ok((m, None)),
                Err(e) => {
                    log::warn!("evaluation {id} failed, redrawing the particle: {e}");
                    let mut rng = rng_from(derive_seed2(seed, id as u64, 2));
                    let q = Particle::fresh(dim, &mut rng);
                    evaluator(id, &prior.denormalize(&q.position))
                        .map(|m| (m, Some(q)))
                        .map_err(|e| Error::Evaluation {
                            id,
                            source: Box::new(e),
                        })
                }
            }
        })
        .collect();
    let mut ms = Vec::with_capacity(outcomes.len());
    for (p, out) in swarm.particles.iter_mut().zip(outcomes) {
        let (m, redrawn) = out?;
        if !m.is_finite() {
            return Err(Error::Domain(format!("evaluator returned non-finite misfit {m}")));
        }
        if let Some(q) = redrawn {
            *p = q;
        }
        ms.push(m);
    }
    Ok(ms)
}

/// Runs the swarm and returns every evaluated model in evaluation order.
/// `evaluator` receives the evaluation id and the point in parameter units.
pub fn run_sampling<F>(prior: &PriorBox, evaluator: F, cfg: &PsoConfig) -> Result<Vec<SampledModel>>
where
    F: Fn(usize, &MetaVector) -> Result<f64> + Sync,
{
    prior.validate()?;
    cfg.validate()?;
    if prior.dim() == 0 {
        return Err(Error::Domain("prior box has no parameters".into()));
    }
    let mut rng = rng_from(derive_seed2(cfg.seed, 0, 0));
    let mut swarm = Swarm::uniform(cfg.swarm_size, prior.dim(), &mut rng);
    let mut history = Vec::with_capacity(cfg.n_evaluations());
    for it in 1..=cfg.n_iterations {
        if it > 1 {
            let mut rng = rng_from(derive_seed2(cfg.seed, it as u64, 0));
            let gbest = swarm.gbest.as_ref().expect("swarm evaluated").0.clone();
            if cfg.restart_at.contains(&it) {
                let mut rrng = rng_from(derive_seed2(cfg.seed, it as u64, 1));
                let fresh = swarm.restart(cfg.restart_fraction, &mut rrng);
                log::info!("iteration {it}: restarted {} particles", fresh.len());
                let mut movers: Vec<Particle> = Vec::new();
                let mut slots = Vec::new();
                for (i, p) in swarm.particles.iter().enumerate() {
                    if !fresh.contains(&i) {
                        movers.push(p.clone());
                        slots.push(i);
                    }
                }
                step(&mut movers, &gbest, cfg, &mut rng);
                for (i, p) in slots.into_iter().zip(movers) {
                    swarm.particles[i] = p;
                }
            } else {
                step(&mut swarm.particles, &gbest, cfg, &mut rng);
            }
        }
        let first_id = history.len();
        let ms = evaluate_swarm(prior, &mut swarm, &evaluator, first_id, cfg.seed)?;
        swarm.record(&ms);
        for (i, (p, &m)) in swarm.particles.iter().zip(&ms).enumerate() {
            history.push(SampledModel::new(first_id + i, prior.denormalize(&p.position), m, it));
        }
        log::info!(
            "PSO iteration {it}: best misfit {:.4}",
            swarm.gbest.as_ref().map_or(f64::NAN, |g| g.1)
        );
    }
    Ok(history)
}

/// Running minimum of the misfit over evaluation order.
pub fn best_so_far(history: &[SampledModel]) -> Vec<f64> {
    history
        .iter()
        .scan(f64::INFINITY, |best, s| {
            *best = best.min(s.m);
            Some(*best)
        })
        .collect()
}

pub fn write_history(path: impl AsRef<Path>, prior: &PriorBox, history: &[SampledModel]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("id,iteration");
    for name in prior.names() {
        out.push(',');
        out.push_str(name);
    }
    out.push_str(",misfit\n");
    for s in history {
        out.push_str(&format!("{},{}", s.id, s.iteration));
        for x in &s.position.values {
            out.push_str(&format!(",{x}"));
        }
        out.push_str(&format!(",{}\n", s.m));
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(out.as_bytes()))
        .map_err(|e| Error::io(path, e))
}

/// Reads a history file, returning the parameter names and the models.
pub fn read_history(path: impl AsRef<Path>) -> Result<(Vec<String>, Vec<SampledModel>)> {
    let path = path.as_ref();
    let mut rdr = csv::Reader::from_path(path)?;
    let headers = rdr.headers()?.clone();
    let n = headers.len();
    if n < 3 || &headers[0] != "id" || &headers[1] != "iteration" || &headers[n - 1] != "misfit" {
        return Err(Error::Format(format!(
            "{}: expected header id,iteration,<params>,misfit",
            path.display()
        )));
    }
    let names: Vec<String> = headers.iter().skip(2).take(n - 3).map(String::from).collect();
    let mut models = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let bad = |what: &str| Error::Format(format!("{}: row {}: bad {what}", path.display(), line + 2));
        let id = rec[0].trim().parse().map_err(|_| bad("id"))?;
        let iteration = rec[1].trim().parse().map_err(|_| bad("iteration"))?;
        let values = (2..n - 1)
            .map(|c| rec[c].trim().parse::<f64>().map_err(|_| bad(&headers[c])))
            .collect::<Result<Vec<_>>>()?;
        let m = rec[n - 1].trim().parse().map_err(|_| bad("misfit"))?;
        models.push(SampledModel::new(id, MetaVector::new(values), m, iteration));
    }
    Ok((names, models))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metaspace::PriorParam;
    use proptest::prelude::*;

    fn square(lo: f64, hi: f64) -> PriorBox {
        PriorBox::new(vec![
            PriorParam {
                name: "x".into(),
                lo,
                hi,
            },
            PriorParam {
                name: "y".into(),
                lo,
                hi,
            },
        ])
        .unwrap()
    }

    fn quadratic(c: [f64; 2]) -> impl Fn(usize, &MetaVector) -> Result<f64> + Sync {
        move |_, v| Ok((v.values[0] - c[0]).powi(2) + (v.values[1] - c[1]).powi(2))
    }

    #[test]
    fn frozen_without_coefficients() {
        let cfg = PsoConfig {
            inertia: 0.0,
            cognitive: 0.0,
            social: 0.0,
            ..Default::default()
        };
        let mut rng = rng_from(1);
        let mut s = Swarm::uniform(4, 3, &mut rng);
        for p in &mut s.particles {
            p.velocity = vec![0.3, -0.2, 0.1];
        }
        let before: Vec<Vec<f64>> = s.particles.iter().map(|p| p.position.clone()).collect();
        step(&mut s.particles, &[0.5; 3], &cfg, &mut rng);
        let after: Vec<Vec<f64>> = s.particles.iter().map(|p| p.position.clone()).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn lone_particle_velocity_decays_by_inertia() {
        let cfg = PsoConfig::default();
        let mut p = Particle {
            position: vec![0.5],
            velocity: vec![0.0],
            best_position: vec![0.5],
            best_m: 0.0,
            last_m: 0.0,
        };
        // Place it at its bests with a known velocity, then take one step.
        p.velocity[0] = 0.01;
        let mut ps = vec![p];
        let mut rng = rng_from(2);
        step(&mut ps, &[0.5], &cfg, &mut rng);
        assert!((ps[0].velocity[0] - 0.0072).abs() < 1e-15);
    }

    #[test]
    fn reflection_cases() {
        assert_eq!(reflect(0.3), (0.3, false));
        let (y, f) = reflect(1.25);
        assert!((y - 0.75).abs() < 1e-15 && f);
        let (y, f) = reflect(-0.25);
        assert!((y - 0.25).abs() < 1e-15 && f);
        let (y, f) = reflect(-1.5);
        assert!((y - 0.5).abs() < 1e-15 && !f);
        let (y, f) = reflect(2.25);
        assert!((y - 0.25).abs() < 1e-15 && !f);
    }

    #[test]
    fn quadratic_optimum_found() {
        let c = [1.3, -2.1];
        let cfg = PsoConfig {
            swarm_size: 20,
            n_iterations: 100,
            seed: 3,
            ..Default::default()
        };
        let h = run_sampling(&square(-5.0, 5.0), quadratic(c), &cfg).unwrap();
        let best = h.iter().min_by(|a, b| a.m.total_cmp(&b.m)).unwrap();
        let d = ((best.position.values[0] - c[0]).powi(2) + (best.position.values[1] - c[1]).powi(2)).sqrt();
        assert!(d < 1e-3, "distance {d}");
    }

    #[test]
    fn one_iteration_history() {
        let cfg = PsoConfig {
            swarm_size: 5,
            n_iterations: 1,
            ..Default::default()
        };
        let prior = square(0.0, 2.0);
        let h = run_sampling(&prior, quadratic([1.0, 1.0]), &cfg).unwrap();
        assert_eq!(h.len(), 5);
        assert!(h.iter().all(|s| prior.contains(&s.position) && s.log_likelihood == -s.m));
        assert_eq!(h.iter().map(|s| s.id).collect::<Vec<_>>(), vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn deterministic_history() {
        let cfg = PsoConfig {
            swarm_size: 6,
            n_iterations: 5,
            restart_at: vec![3],
            seed: 9,
            ..Default::default()
        };
        let a = run_sampling(&square(0.0, 1.0), quadratic([0.2, 0.7]), &cfg).unwrap();
        let b = run_sampling(&square(0.0, 1.0), quadratic([0.2, 0.7]), &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn failed_evaluation_is_redrawn_once() {
        let cfg = PsoConfig {
            swarm_size: 4,
            n_iterations: 2,
            ..Default::default()
        };
        let prior = square(0.0, 1.0);
        let calls = std::sync::atomic::AtomicUsize::new(0);
        let flaky = |id: usize, v: &MetaVector| {
            if id == 2 && calls.fetch_add(1, std::sync::atomic::Ordering::SeqCst) == 0 {
                return Err(Error::Domain("transient".into()));
            }
            Ok(v.values[0])
        };
        let h = run_sampling(&prior, flaky, &cfg).unwrap();
        assert_eq!(h.len(), 8);
        let always = |id: usize, _: &MetaVector| {
            if id == 1 {
                Err(Error::Domain("broken".into()))
            } else {
                Ok(0.0)
            }
        };
        assert!(matches!(
            run_sampling(&prior, always, &cfg),
            Err(Error::Evaluation { id: 1, .. })
        ));
    }

    #[test]
    fn restart_spreads_a_converged_swarm() {
        let mut rng = rng_from(4);
        let mut s = Swarm::uniform(10, 2, &mut rng);
        for (i, p) in s.particles.iter_mut().enumerate() {
            p.position = vec![0.5 + 1e-4 * i as f64, 0.5];
            p.last_m = i as f64;
        }
        let before = s.mean_pairwise_distance();
        let fresh = s.restart(0.3, &mut rng);
        assert_eq!(fresh, vec![7, 8, 9]);
        assert!(s.mean_pairwise_distance() > before);
    }

    #[test]
    fn history_round_trip() {
        let cfg = PsoConfig {
            swarm_size: 3,
            n_iterations: 2,
            ..Default::default()
        };
        let prior = square(-1.0, 1.0);
        let h = run_sampling(&prior, quadratic([0.0, 0.0]), &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("history.csv");
        write_history(&p, &prior, &h).unwrap();
        let (names, back) = read_history(&p).unwrap();
        assert_eq!(names, vec!["x", "y"]);
        assert_eq!(back, h);
    }

    proptest! {
        #[test]
        fn positions_stay_in_box(seed in 0u64..1000, w in 0.0f64..0.99, c1 in 0.0f64..3.0, c2 in 0.0f64..3.0) {
            let cfg = PsoConfig { swarm_size: 6, n_iterations: 8, inertia: w, cognitive: c1, social: c2, seed, ..Default::default() };
            let prior = square(-2.0, 3.0);
            let h = run_sampling(&prior, quadratic([2.9, -1.9]), &cfg).unwrap();
            prop_assert!(h.iter().all(|s| prior.contains(&s.position)));
            let b = best_so_far(&h);
            prop_assert!(b.windows(2).all(|w| w[1] <= w[0]));
        }

        #[test]
        fn reflect_lands_in_unit_interval(x in -50.0f64..50.0) {
            let (y, _) = reflect(x);
            prop_assert!((0.0..=1.0).contains(&y));
        }
    }
}
