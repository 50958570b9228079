//! The run modes: synthetic generation, conventional GSI, multi-scale
//! sampling with NAB post-processing, and their comparison.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use gsuq::dss::{SimulationPlan, TargetDistribution};
use gsuq::forward::{read_wavelet, write_wavelet, Wavelet};
use gsuq::grid::{read_volume, read_wells, write_volume, write_wells, Volume, WellSet};
use gsuq::gsi::{run_gsi, GsiReport};
use gsuq::kriging::Neighborhood;
use gsuq::metaspace::{materialize, misfit, MetaSpace, MetaVector};
use gsuq::nab::{coverage, coverage_between, gibbs_resample, marginal_ppd, quantile_maps, Marginal, NabConfig, PosteriorEnsemble, ProxySurface, QuantileMaps};
use gsuq::pso::{read_history, run_sampling, write_history, PsoConfig, SampledModel};
use gsuq::rng::derive_seed2;
use gsuq::synthetic::generate_synthetic;
use gsuq::{Error, Result};

use crate::config::{Mode, RunConfig};
use crate::report::{self, ks_distance, Envelope, EvalRecord, ReportInputs};

pub const HISTORY_FILE: &str = "history.csv";
pub const EVALUATIONS_FILE: &str = "evaluations.csv";
pub const MODELS_DIR: &str = "models";

/// Seed tag of the inner GSI run of one evaluation.
const EVAL_TAG: u64 = 4;
/// Seed tag of the repeat runs of the misfit calibration.
const CALIBRATION_TAG: u64 = 5;

pub fn model_file(id: usize) -> String {
    format!("model_{id:05}.gsuq")
}

pub(crate) fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

/// Observed data and wells, split into conditioning and blind sets.
#[derive(Debug, Clone)]
pub struct Inputs {
    pub observed: Volume,
    pub wavelet: Wavelet,
    pub wells: WellSet,
    pub conditioning: WellSet,
    pub blind: WellSet,
}

fn split_wells(cfg: &RunConfig, wells: &WellSet) -> Result<(WellSet, WellSet)> {
    for name in cfg.blind_wells.iter().chain(&cfg.conditioning_wells) {
        if wells.get(name).is_none() {
            return Err(Error::Config(format!("well {name} is not in the wells file")));
        }
    }
    let (rest, blind) = wells.partition(&cfg.blind_wells);
    let conditioning = if cfg.conditioning_wells.is_empty() {
        rest
    } else {
        wells.partition(&cfg.conditioning_wells).1
    };
    Ok((conditioning, blind))
}

pub fn load_inputs(cfg: &RunConfig) -> Result<Inputs> {
    let path = |p: &Option<PathBuf>| p.clone().expect("validated config");
    let observed = read_volume(path(&cfg.paths.observed))?;
    let grid = *observed.grid();
    if let Some(g) = &cfg.grid {
        if g != &grid {
            return Err(Error::Config(format!("configured grid {g:?} differs from the observed volume {grid:?}")));
        }
    }
    let wavelet = read_wavelet(path(&cfg.paths.wavelet))?;
    if (wavelet.dt - grid.dz).abs() > 1e-9 * grid.dz {
        return Err(Error::Consistency(format!(
            "wavelet dt {} ms differs from grid dz {} ms",
            wavelet.dt, grid.dz
        )));
    }
    let wells = read_wells(path(&cfg.paths.wells))?;
    wells.validate(&grid)?;
    let (conditioning, blind) = split_wells(cfg, &wells)?;
    Ok(Inputs {
        observed,
        wavelet,
        wells,
        conditioning,
        blind,
    })
}

/// Refuses a plan whose conditioning data include a blind well, by name or
/// by column.
pub fn ensure_blind_excluded(plan: &SimulationPlan, blind: &WellSet) -> Result<()> {
    for w in &plan.conditioning.wells {
        if blind.wells.iter().any(|b| b.name == w.name || (b.i, b.j) == (w.i, w.j)) {
            return Err(Error::Consistency(format!("blind well {} reached a simulation plan", w.name)));
        }
    }
    Ok(())
}

fn neighborhood(cfg: &RunConfig) -> Neighborhood {
    Neighborhood {
        max_data: cfg.neighborhood.max_data,
        search_radii: None,
    }
}

/// Writes the synthetic dataset: observed seismic, true impedance, wells,
/// wavelet, facies indicator and the list of noisy traces.
pub fn run_synth(cfg: &RunConfig, out: &Path) -> Result<()> {
    let spec = cfg
        .synthetic
        .as_ref()
        .ok_or_else(|| Error::Config("the [synthetic] section is required".into()))?;
    let d = generate_synthetic(spec)?;
    create_dir(out)?;
    write_volume(out.join("observed.gsuq"), &d.observed)?;
    write_volume(out.join("true_ip.gsuq"), &d.true_ip)?;
    let facies: Vec<f32> = d.facies.iter().map(|&f| f as f32).collect();
    write_volume(out.join("facies.gsuq"), &Volume::new(spec.grid, facies)?)?;
    write_wells(out.join("wells.csv"), &d.wells)?;
    write_wavelet(out.join("wavelet.csv"), &d.wavelet)?;
    let mut noisy = String::from("trace,i,j\n");
    for &t in &d.noisy_traces {
        noisy.push_str(&format!("{t},{},{}\n", t % spec.grid.nx, t / spec.grid.nx));
    }
    report::write_text(&out.join("noisy_traces.csv"), &noisy)
}

#[derive(Debug, Clone)]
pub struct ConventionalOutcome {
    pub report: GsiReport,
    pub target: TargetDistribution,
    pub envelope: Envelope,
    /// Fraction of blind samples inside the final ensemble's min-max range.
    pub coverage: f64,
    /// KS distance between the pooled final ensemble and all well samples.
    pub ks_to_wells: f64,
}

/// Conventional GSI with the fixed model of `[conventional]`.
pub fn run_conventional(cfg: &RunConfig, inputs: &Inputs, out: &Path) -> Result<ConventionalOutcome> {
    let grid = *inputs.observed.grid();
    let target = cfg.conventional.target(&inputs.conditioning.ip_values())?;
    let model = cfg.conventional.model(&target)?;
    let plan = SimulationPlan {
        grid,
        seed: cfg.seed,
        n_realizations: cfg.gsi.ensemble_size,
        neighborhood: neighborhood(cfg),
        model,
        target: target.clone(),
        conditioning: inputs.conditioning.clone(),
        secondary: None,
    };
    ensure_blind_excluded(&plan, &inputs.blind)?;
    // The blind-well comparison needs every member of the final ensemble.
    let mut gsi = cfg.gsi;
    gsi.persist = true;
    let mut rep = run_gsi(&plan, &inputs.observed, &inputs.wavelet, &gsi)?;
    let envelope = Envelope::of(&rep.ensemble)?;
    let cov = coverage_between(&envelope.min, &envelope.max, &inputs.blind);
    let pooled: Vec<f64> = rep
        .ensemble
        .iter()
        .flat_map(|v| v.values().iter().map(|&x| x as f64))
        .collect();
    let ks = ks_distance(&pooled, &inputs.wells.ip_values());

    create_dir(out)?;
    rep.write_diagnostics(out.join("gsi_diagnostics.csv"))?;
    write_volume(out.join("best_ip.gsuq"), &rep.best_ip)?;
    write_volume(out.join("best_synthetic.gsuq"), &rep.best_synthetic)?;
    write_volume(out.join("ensemble_mean.gsuq"), &rep.ensemble_mean)?;
    write_volume(out.join("ensemble_variance.gsuq"), &rep.ensemble_variance)?;
    write_volume(out.join("envelope_min.gsuq"), &envelope.min)?;
    write_volume(out.join("envelope_max.gsuq"), &envelope.max)?;
    if cfg.gsi.persist {
        let dir = out.join("realizations");
        create_dir(&dir)?;
        for (r, v) in rep.ensemble.iter().enumerate() {
            write_volume(dir.join(format!("real_{r:03}.gsuq")), v)?;
        }
    }
    report::write_conventional_wells(&out.join("blind_wells.csv"), &inputs.blind, &envelope, &rep.ensemble)?;
    report::write_histograms(
        &out.join("histograms.csv"),
        &[
            ("all_wells", inputs.wells.ip_values()),
            ("conditioning_wells", inputs.conditioning.ip_values()),
            ("ensemble", pooled),
        ],
    )?;
    let fin = *rep.final_stats();
    let summary = format!(
        "mode: conventional\niterations: {}\nfinal global CC: {}\nfinal mean trace CC: {}\n\
         final median trace CC: {}\nblind-well min-max coverage: {}\nKS to all wells: {}\n",
        rep.iterations.len(),
        fin.global_cc_best,
        fin.mean_trace_cc,
        fin.median_trace_cc,
        cov,
        ks
    );
    report::write_text(&out.join("summary.txt"), &summary)?;
    if !cfg.gsi.persist {
        rep.ensemble.clear();
    }
    Ok(ConventionalOutcome {
        report: rep,
        target,
        envelope,
        coverage: cov,
        ks_to_wells: ks,
    })
}

#[derive(Debug, Clone)]
pub struct NabOutcome {
    pub ensemble: PosteriorEnsemble,
    pub marginals: Vec<Marginal>,
    pub maps: QuantileMaps,
    pub coverage: f64,
    pub ks_to_wells: f64,
}

#[derive(Debug, Clone)]
pub struct MultiscaleOutcome {
    pub calibration: Option<Calibration>,
    pub sigma2: f64,
    pub history: Vec<SampledModel>,
    pub evaluations: BTreeMap<usize, EvalRecord>,
    pub nab: NabOutcome,
}

fn inner_gsi(cfg: &RunConfig, inputs: &Inputs, space: &MetaSpace, v: &MetaVector, seed: u64) -> Result<GsiReport> {
    let mat = materialize(space, v)?;
    let plan = SimulationPlan {
        grid: *inputs.observed.grid(),
        seed,
        n_realizations: cfg.multiscale.gsi.ensemble_size,
        neighborhood: neighborhood(cfg),
        model: mat.model,
        target: mat.target,
        conditioning: inputs.conditioning.clone(),
        secondary: None,
    };
    ensure_blind_excluded(&plan, &inputs.blind)?;
    run_gsi(&plan, &inputs.observed, &inputs.wavelet, &cfg.multiscale.gsi)
}

/// Misfit spread of repeated inner runs at the prior midpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    /// Misfits at the configured `sigma2`.
    pub misfits: Vec<f64>,
    pub sd: f64,
    /// `sigma2` scaled so that the repeat spread is one unit.
    pub sigma2: f64,
}

/// The misfit scales as 1/sigma2, so multiplying sigma2 by the repeat
/// standard deviation brings that spread to one likelihood unit.
pub fn calibrate_sigma2(cfg: &RunConfig, inputs: &Inputs, space: &MetaSpace) -> Result<Calibration> {
    let n = cfg.multiscale.calibrate_sigma2;
    let v = space.prior.midpoint();
    let misfits = (0..n)
        .map(|r| {
            let rep = inner_gsi(cfg, inputs, space, &v, derive_seed2(cfg.seed, r as u64, CALIBRATION_TAG))?;
            Ok(misfit(&inputs.observed, &rep.best_synthetic, cfg.sigma2)?.m)
        })
        .collect::<Result<Vec<f64>>>()?;
    let mean = misfits.iter().sum::<f64>() / n as f64;
    let sd = (misfits.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0)).sqrt();
    let sigma2 = if sd > 0.0 {
        cfg.sigma2 * sd
    } else {
        log::warn!("repeat misfits are identical; keeping sigma2 = {}", cfg.sigma2);
        cfg.sigma2
    };
    log::info!("calibrated sigma2 = {sigma2} from misfit sd {sd}");
    Ok(Calibration { misfits, sd, sigma2 })
}

/// PSO over the metaparameters, each evaluation a full inner GSI run, then
/// NAB post-processing of the sampled models.
pub fn run_multiscale(cfg: &RunConfig, inputs: &Inputs, out: &Path) -> Result<MultiscaleOutcome> {
    let space = cfg.meta_space()?;
    let models_dir = out.join(MODELS_DIR);
    create_dir(&models_dir)?;
    let calibration = if cfg.multiscale.calibrate_sigma2 > 0 {
        let c = calibrate_sigma2(cfg, inputs, &space)?;
        let mut text = String::from("repeat,misfit\n");
        for (r, m) in c.misfits.iter().enumerate() {
            text.push_str(&format!("{r},{m}\n"));
        }
        report::write_text(&out.join("calibration.csv"), &text)?;
        Some(c)
    } else {
        None
    };
    let sigma2 = calibration.as_ref().map_or(cfg.sigma2, |c| c.sigma2);
    let records: Mutex<BTreeMap<usize, EvalRecord>> = Mutex::new(BTreeMap::new());
    let evaluate = |id: usize, v: &MetaVector| -> Result<f64> {
        let rep = inner_gsi(cfg, inputs, &space, v, derive_seed2(cfg.seed, id as u64, EVAL_TAG))?;
        let score = misfit(&inputs.observed, &rep.best_synthetic, sigma2)?;
        write_volume(models_dir.join(model_file(id)), &rep.best_ip)?;
        let fin = rep.final_stats();
        records.lock().expect("evaluation records").insert(
            id,
            EvalRecord {
                global_cc: fin.global_cc_best,
                mean_trace_cc: fin.mean_trace_cc,
                misfit: score.m,
            },
        );
        log::info!("evaluation {id}: misfit {:.4}, global CC {:.4}", score.m, fin.global_cc_best);
        Ok(score.m)
    };
    let pso = PsoConfig {
        seed: cfg.seed,
        ..cfg.pso.clone()
    };
    let history = run_sampling(&space.prior, evaluate, &pso)?;
    let evaluations = records.into_inner().expect("evaluation records");
    write_history(out.join(HISTORY_FILE), &space.prior, &history)?;
    report::write_evaluations(&out.join(EVALUATIONS_FILE), &evaluations)?;
    let nab = run_nab(cfg, &inputs.wells, &inputs.blind, out)?;
    Ok(MultiscaleOutcome {
        calibration,
        sigma2,
        history,
        evaluations,
        nab,
    })
}

/// NAB post-processing of a multi-scale output directory: posterior
/// weights, marginals, quantile maps, blind-well coverage and the report.
pub fn run_nab(cfg: &RunConfig, wells: &WellSet, blind: &WellSet, dir: &Path) -> Result<NabOutcome> {
    let prior = cfg.prior_box()?;
    let (names, history) = read_history(dir.join(HISTORY_FILE))?;
    if names.iter().map(String::as_str).ne(prior.names()) {
        return Err(Error::Consistency(format!(
            "history parameters {names:?} differ from the configured prior {:?}",
            prior.names()
        )));
    }
    let surface = ProxySurface::new(&prior, &history)?;
    let nab_cfg = NabConfig {
        n_walkers: cfg.nab.walkers,
        n_steps: cfg.nab.resamples.div_ceil(cfg.nab.walkers),
        burn_in: cfg.nab.burn_in,
        seed: cfg.seed,
    };
    let ensemble = gibbs_resample(&surface, &nab_cfg)?;
    ensemble.write_weights(dir.join("weights.csv"))?;
    let marg_dir = dir.join("marginals");
    create_dir(&marg_dir)?;
    let mut marginals = Vec::with_capacity(prior.dim());
    for d in 0..prior.dim() {
        let m = marginal_ppd(&ensemble, &surface, d, cfg.nab.marginal_bins)?;
        m.write(marg_dir.join(format!("{}.csv", m.name)))?;
        marginals.push(m);
    }
    let mut volumes = BTreeMap::new();
    for (&id, &count) in &ensemble.counts {
        if count > 0 {
            volumes.insert(id, read_volume(dir.join(MODELS_DIR).join(model_file(id)))?);
        }
    }
    let maps = quantile_maps(&ensemble, &volumes)?;
    maps.write(dir)?;
    let cov = coverage(&maps, blind);
    let pooled: Vec<f64> = [&maps.p10, &maps.p50, &maps.p90]
        .iter()
        .flat_map(|v| v.values().iter().map(|&x| x as f64))
        .collect();
    let ks = ks_distance(&pooled, &wells.ip_values());
    let evaluations = report::read_evaluations(&dir.join(EVALUATIONS_FILE)).unwrap_or_default();
    let conditioning_ip = {
        let blind_names: Vec<String> = blind.names().iter().map(|s| s.to_string()).collect();
        wells.partition(&blind_names).0.ip_values()
    };
    report::emit_report(
        &dir.join("report"),
        &ReportInputs {
            names: &names,
            history: &history,
            weights: Some(&ensemble),
            evaluations: &evaluations,
            maps: Some(&maps),
            blind,
            histograms: vec![
                ("all_wells", wells.ip_values()),
                ("conditioning_wells", conditioning_ip),
                ("p10_p50_p90", pooled),
            ],
            coverage: Some(cov),
        },
    )?;
    Ok(NabOutcome {
        ensemble,
        marginals,
        maps,
        coverage: cov,
        ks_to_wells: ks,
    })
}

#[derive(Debug, Clone)]
pub struct Comparison {
    pub conventional: ConventionalOutcome,
    pub multiscale: MultiscaleOutcome,
}

impl Comparison {
    pub fn coverage_gain(&self) -> f64 {
        self.multiscale.nab.coverage - self.conventional.coverage
    }

    pub fn multiscale_closer_to_wells(&self) -> bool {
        self.multiscale.nab.ks_to_wells < self.conventional.ks_to_wells
    }
}

/// Conventional and multi-scale runs on the same inputs, written to
/// `conventional/` and `multiscale/` with a side-by-side table.
pub fn compare(cfg: &RunConfig, inputs: &Inputs, out: &Path) -> Result<Comparison> {
    let conventional = run_conventional(cfg, inputs, &out.join("conventional"))?;
    let multiscale = run_multiscale(cfg, inputs, &out.join("multiscale"))?;
    let c = Comparison {
        conventional,
        multiscale,
    };
    let table = format!(
        "metric,conventional,multiscale\nblind_coverage,{},{}\nks_to_all_wells,{},{}\n",
        c.conventional.coverage, c.multiscale.nab.coverage, c.conventional.ks_to_wells, c.multiscale.nab.ks_to_wells
    );
    report::write_text(&out.join("comparison.csv"), &table)?;
    let summary = format!(
        "conventional blind coverage (min-max): {}\nmulti-scale blind coverage (P10-P90): {}\n\
         KS to all wells, conventional ensemble: {}\nKS to all wells, P10/P50/P90: {}\nmulti-scale sigma2: {}\n",
        c.conventional.coverage,
        c.multiscale.nab.coverage,
        c.conventional.ks_to_wells,
        c.multiscale.nab.ks_to_wells,
        c.multiscale.sigma2
    );
    report::write_text(&out.join("summary.txt"), &summary)?;
    Ok(c)
}

/// Validates the config for `mode` and runs it into `out`.
pub fn run_mode(cfg: &RunConfig, mode: Mode, out: &Path) -> Result<()> {
    cfg.validate(mode)?;
    match mode {
        Mode::Synth => run_synth(cfg, out),
        Mode::Conventional => run_conventional(cfg, &load_inputs(cfg)?, out).map(|_| ()),
        Mode::Multiscale => run_multiscale(cfg, &load_inputs(cfg)?, out).map(|_| ()),
        Mode::Compare => compare(cfg, &load_inputs(cfg)?, out).map(|_| ()),
        Mode::Nab => {
            let wells = read_wells(cfg.paths.wells.as_ref().expect("validated config"))?;
            let (_, blind) = split_wells(cfg, &wells)?;
            run_nab(cfg, &wells, &blind, out).map(|_| ())
        }
    }
}
