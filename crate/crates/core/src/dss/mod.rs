//! Direct sequential simulation and co-simulation.
//!
//! Nodes are visited along a random path. At each node the previously
//! simulated nodes and the well data inside the search neighborhood are
//! kriged (or co-kriged with a collocated secondary volume) and a value is
//! drawn from the target distribution restricted to the local mean and
//! variance.

mod target;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;

pub use target::{local_sample, LocalDraw, LocalSampler, TargetDistribution};

use crate::error::{Error, Result};
use crate::grid::{Grid3, Volume, WellSet};
use crate::kriging::{Kriger, Neighborhood, Secondary};
use crate::rng::{derive_seed2, rng_from};
use crate::variogram::VariogramModel;

/// Secondary information for co-simulation: a collocated volume and the
/// local correlation coefficient per cell.
#[derive(Debug, Clone)]
pub struct SecondaryData {
    pub volume: Volume,
    pub cc: Volume,
}

#[derive(Debug, Clone)]
pub struct SimulationPlan {
    pub grid: Grid3,
    pub seed: u64,
    pub n_realizations: usize,
    pub neighborhood: Neighborhood,
    pub model: VariogramModel,
    pub target: TargetDistribution,
    pub conditioning: WellSet,
    pub secondary: Option<SecondaryData>,
}

impl SimulationPlan {
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        self.model.validate()?;
        self.neighborhood.validate()?;
        self.conditioning.validate(&self.grid)?;
        if self.n_realizations == 0 {
            return Err(Error::Domain("n_realizations must be at least 1".into()));
        }
        if let Some(sec) = &self.secondary {
            if sec.volume.grid() != &self.grid || sec.cc.grid() != &self.grid {
                return Err(Error::Domain("secondary volumes must match the simulation grid".into()));
            }
        }
        Ok(())
    }

    /// Seed of the random path of realization `r`.
    pub fn path_seed(&self, r: usize) -> u64 {
        derive_seed2(self.seed, r as u64, 0)
    }

    fn draw_seed(&self, r: usize) -> u64 {
        derive_seed2(self.seed, r as u64, 1)
    }
}

/// Uniform random permutation of all node indices of `grid`.
pub fn random_path(grid: &Grid3, seed: u64) -> Vec<usize> {
    let mut path: Vec<usize> = (0..grid.n_cells()).collect();
    path.shuffle(&mut rng_from(seed));
    path
}

/// Neighbor offsets inside the search ellipsoid, closest (in variogram
/// distance) first.
#[derive(Debug, Clone)]
pub struct SearchTemplate {
    offsets: Vec<([isize; 3], [f64; 3])>,
}

impl SearchTemplate {
    pub fn new(grid: &Grid3, model: &VariogramModel, neighborhood: &Neighborhood) -> Self {
        let radii = neighborhood.radii(model);
        let search = VariogramModel {
            a1: radii[0],
            a2: radii[1],
            a3: radii[2],
            ..*model
        };
        let rh = radii[0].max(radii[1]);
        let ext = |r: f64, d: f64, n: usize| ((r / d).ceil() as isize).min(n as isize - 1);
        let (ei, ej, ek) = (ext(rh, grid.dx, grid.nx), ext(rh, grid.dy, grid.ny), ext(radii[2], grid.dz, grid.nz));
        let mut cands = Vec::new();
        for dj in -ej..=ej {
            for di in -ei..=ei {
                for dk in -ek..=ek {
                    if di == 0 && dj == 0 && dk == 0 {
                        continue;
                    }
                    let h = [di as f64 * grid.dx, dj as f64 * grid.dy, dk as f64 * grid.dz];
                    if search.normalized_distance(h) > 1.0 + 1e-12 {
                        continue;
                    }
                    cands.push((model.normalized_distance(h), [di, dj, dk], h));
                }
            }
        }
        cands.sort_by(|a, b| {
            a.0.total_cmp(&b.0)
                .then(a.1[2].abs().cmp(&b.1[2].abs()))
                .then(a.1.cmp(&b.1))
        });
        SearchTemplate {
            offsets: cands.into_iter().map(|(_, o, h)| (o, h)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }
}

struct Shared<'a> {
    plan: &'a SimulationPlan,
    sampler: &'a LocalSampler,
    template: &'a SearchTemplate,
    secondary: Option<(&'a [f32], &'a [f32], f64, f64)>,
}

fn simulate_one(shared: &Shared<'_>, r: usize) -> Result<Volume> {
    let plan = shared.plan;
    let grid = plan.grid;
    let n = grid.n_cells();
    let mut values = vec![0.0f64; n];
    let mut informed = vec![false; n];
    let mut conditioned = vec![false; n];
    for (idx, ip) in plan.conditioning.cells(&grid) {
        values[idx] = ip as f32 as f64;
        informed[idx] = true;
        conditioned[idx] = true;
    }
    let path = random_path(&grid, plan.path_seed(r));
    let mut rng = rng_from(plan.draw_seed(r));
    let mut kriger = Kriger::new(&plan.model);
    let max_data = plan.neighborhood.max_data;
    let mut offs: Vec<[f64; 3]> = Vec::with_capacity(max_data);
    let mut vals: Vec<f64> = Vec::with_capacity(max_data);
    let global_mean = plan.target.mean();
    let mut n_clamped = 0usize;
    let (nx, ny, nz) = (grid.nx as isize, grid.ny as isize, grid.nz as isize);
    for &idx in &path {
        if conditioned[idx] {
            continue;
        }
        let (i, j, k) = grid.coords(idx);
        let (i, j, k) = (i as isize, j as isize, k as isize);
        offs.clear();
        vals.clear();
        for (o, h) in &shared.template.offsets {
            let (a, b, c) = (i + o[0], j + o[1], k + o[2]);
            if a < 0 || b < 0 || c < 0 || a >= nx || b >= ny || c >= nz {
                continue;
            }
            let nidx = (c + nz * (a + nx * b)) as usize;
            if informed[nidx] {
                offs.push(*h);
                vals.push(values[nidx]);
                if offs.len() == max_data {
                    break;
                }
            }
        }
        let kr = match shared.secondary {
            Some((sec, cc, mean, var)) => kriger.collocated(
                &offs,
                &vals,
                global_mean,
                &Secondary {
                    value: sec[idx] as f64,
                    mean,
                    variance: var,
                    cc: cc[idx] as f64,
                },
            ),
            None => kriger.simple(&offs, &vals, global_mean),
        }
        .map_err(|e| Error::Simulation {
            node: idx,
            neighbors: offs.len(),
            source: Box::new(e),
        })?;
        let u: f64 = rng.random();
        let draw = shared.sampler.sample(&kr, u);
        if draw.clamped {
            n_clamped += 1;
        }
        values[idx] = draw.value;
        informed[idx] = true;
    }
    if n_clamped > 0 {
        log::debug!("realization {r}: {n_clamped} kriging means clamped to the target support");
    }
    Volume::from_f64(grid, &values)
}

/// Runs every realization of `plan`, returning each outcome separately.
pub fn simulate_each(plan: &SimulationPlan) -> Result<Vec<Result<Volume>>> {
    plan.validate()?;
    let sampler = LocalSampler::new(plan.target.clone());
    let template = SearchTemplate::new(&plan.grid, &plan.model, &plan.neighborhood);
    let secondary = plan.secondary.as_ref().map(|s| {
        let st = crate::grid::volume_stats(&s.volume);
        (s.volume.values(), s.cc.values(), st.mean, st.variance)
    });
    let shared = Shared {
        plan,
        sampler: &sampler,
        template: &template,
        secondary,
    };
    Ok((0..plan.n_realizations)
        .into_par_iter()
        .map(|r| simulate_one(&shared, r))
        .collect())
}

/// Runs every realization; the first failure aborts the batch.
pub fn simulate(plan: &SimulationPlan) -> Result<Vec<Volume>> {
    simulate_each(plan)?.into_iter().collect()
}
