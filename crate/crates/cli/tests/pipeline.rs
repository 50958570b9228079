use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use gsuq::grid::{read_volume, read_wells, Grid3};
use gsuq::metaspace::PriorParam;
use gsuq::pso::{read_history, PsoConfig};
use gsuq::synthetic::{ChannelSpec, SyntheticSpec};
use gsuq_cli::config::{Mode, RunConfig};
use gsuq_cli::pipeline::{self, load_inputs, model_file};

fn tiny_config(dir: &Path) -> RunConfig {
    let data = dir.join("data");
    let spec = SyntheticSpec {
        grid: Grid3::new(12, 10, 10, 25.0, 25.0, 4.0).unwrap(),
        channels: ChannelSpec {
            count: 1,
            amplitude_cells: 2.0,
            wavelength_cells: 10.0,
            width_cells: 3.0,
            thickness_layers: 4,
        },
        n_wells: 4,
        seed: 5,
        ..Default::default()
    };
    let prior = vec![
        PriorParam { name: "range_h_m".into(), lo: 50.0, hi: 200.0 },
        PriorParam { name: "range_v_ms".into(), lo: 8.0, hi: 24.0 },
        PriorParam { name: "mu1".into(), lo: 3800.0, hi: 4600.0 },
        PriorParam { name: "mu2".into(), lo: 6500.0, hi: 7500.0 },
        PriorParam { name: "sigma1".into(), lo: 300.0, hi: 500.0 },
        PriorParam { name: "sigma2".into(), lo: 200.0, hi: 400.0 },
        PriorParam { name: "prop1".into(), lo: 0.1, hi: 0.5 },
    ];
    let mut cfg = RunConfig {
        seed: 9,
        blind_wells: vec!["W02".into()],
        synthetic: Some(spec),
        prior,
        ..Default::default()
    };
    cfg.paths.observed = Some(data.join("observed.gsuq"));
    cfg.paths.wells = Some(data.join("wells.csv"));
    cfg.paths.wavelet = Some(data.join("wavelet.csv"));
    cfg.gsi.n_iterations = 2;
    cfg.gsi.ensemble_size = 3;
    cfg.conventional.range_h_m = 100.0;
    cfg.conventional.range_v_ms = 12.0;
    cfg.multiscale.gsi.n_iterations = 1;
    cfg.multiscale.gsi.ensemble_size = 2;
    cfg.pso = PsoConfig {
        swarm_size: 2,
        n_iterations: 1,
        ..Default::default()
    };
    cfg.nab.resamples = 400;
    cfg
}

fn synth(cfg: &RunConfig, dir: &Path) {
    pipeline::run_mode(cfg, Mode::Synth, &dir.join("data")).unwrap();
}

fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn multiscale_bookkeeping() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    synth(&cfg, tmp.path());
    let out = tmp.path().join("ms");
    let inputs = load_inputs(&cfg).unwrap();
    let res = pipeline::run_multiscale(&cfg, &inputs, &out).unwrap();
    assert_eq!(res.history.len(), 2);
    assert_eq!(res.evaluations.len(), 2);
    let (names, hist) = read_history(out.join("history.csv")).unwrap();
    assert_eq!(names.len(), 7);
    assert_eq!(hist, res.history);
    let models: Vec<_> = fs::read_dir(out.join("models")).unwrap().collect();
    assert_eq!(models.len(), 2);
    for id in 0..2 {
        read_volume(out.join("models").join(model_file(id))).unwrap();
    }
    let maps = &res.nab.maps;
    for ((a, b), c) in maps.p10.values().iter().zip(maps.p50.values()).zip(maps.p90.values()) {
        assert!(a <= b && b <= c);
    }
    for f in ["weights.csv", "p10.gsuq", "p50.gsuq", "p90.gsuq", "report/summary.txt", "report/parameter_vs_misfit.csv"] {
        assert!(out.join(f).is_file(), "{f}");
    }
}

#[test]
fn conventional_conditions_on_wells_only() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    synth(&cfg, tmp.path());
    let inputs = load_inputs(&cfg).unwrap();
    assert!(inputs.conditioning.get("W02").is_none());
    assert_eq!(inputs.blind.names(), ["W02"]);
    let res = pipeline::run_conventional(&cfg, &inputs, &tmp.path().join("gsi")).unwrap();
    let grid = *inputs.observed.grid();
    for v in &res.report.ensemble {
        for (idx, ip) in inputs.conditioning.cells(&grid) {
            assert_eq!(v.values()[idx], ip as f32);
        }
    }
    let rows = fs::read_to_string(tmp.path().join("gsi/blind_wells.csv")).unwrap();
    assert_eq!(rows.lines().count(), 1 + inputs.blind.n_samples());
}

#[test]
fn blind_well_in_plan_is_refused() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    synth(&cfg, tmp.path());
    let mut inputs = load_inputs(&cfg).unwrap();
    inputs.conditioning = inputs.wells.clone();
    let err = pipeline::run_conventional(&cfg, &inputs, &tmp.path().join("gsi")).unwrap_err();
    assert!(matches!(err, gsuq::Error::Consistency(_)));
}

#[test]
fn nab_reruns_identically() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    synth(&cfg, tmp.path());
    let out = tmp.path().join("ms");
    pipeline::run_mode(&cfg, Mode::Multiscale, &out).unwrap();
    let before = tree(&out);
    pipeline::run_mode(&cfg, Mode::Nab, &out).unwrap();
    assert_eq!(tree(&out), before);
}

#[test]
fn synth_wells_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    synth(&cfg, tmp.path());
    let wells = read_wells(tmp.path().join("data/wells.csv")).unwrap();
    assert_eq!(wells.wells.len(), 4);
    let truth = read_volume(tmp.path().join("data/true_ip.gsuq")).unwrap();
    for (idx, ip) in wells.cells(truth.grid()) {
        assert_eq!(truth.values()[idx], ip as f32);
    }
}

fn gsuq(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_gsuq"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = tmp.path().join("run.toml");
    fs::write(&cfg_path, "seed = 1\n[paths]\nobserved = \"missing.gsuq\"\n").unwrap();
    let out = tmp.path().join("out");
    let cfg = cfg_path.to_str().unwrap();
    let o = out.to_str().unwrap();
    assert_eq!(gsuq(&["invert-gsi", "--config", cfg, "--out", o]).status.code(), Some(2));
    fs::write(&cfg_path, "sede = 1\n").unwrap();
    assert_eq!(gsuq(&["synth", "--config", cfg, "--out", o]).status.code(), Some(2));

    // A valid config over corrupt data is a runtime failure.
    let mut run = tiny_config(tmp.path());
    run.synthetic = None;
    fs::create_dir_all(tmp.path().join("data")).unwrap();
    for f in ["observed.gsuq", "wells.csv", "wavelet.csv"] {
        fs::write(tmp.path().join("data").join(f), b"garbage").unwrap();
    }
    fs::write(&cfg_path, run.to_toml().unwrap()).unwrap();
    assert_eq!(gsuq(&["invert-gsi", "--config", cfg, "--out", o]).status.code(), Some(1));
}

#[test]
fn cli_seed_override_and_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let cfg_path = tmp.path().join("run.toml");
    fs::write(&cfg_path, cfg.to_toml().unwrap()).unwrap();
    let c = cfg_path.to_str().unwrap();
    let run = |cmd: &str, out: &str, seed: &str| {
        let o = tmp.path().join(out);
        let res = gsuq(&[cmd, "--config", c, "--out", o.to_str().unwrap(), "--seed", seed]);
        assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
        tree(&o)
    };
    // Synthetic data follow the [synthetic] seed, not the run seed.
    assert_eq!(run("synth", "data", "1"), run("synth", "data2", "2"));
    assert_eq!(run("invert-gsi", "a", "3"), run("invert-gsi", "b", "3"));
    assert_ne!(run("invert-gsi", "c", "4"), run("invert-gsi", "a", "3"));
}
