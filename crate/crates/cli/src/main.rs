use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gsuq::Error;
use gsuq_cli::pipeline::run_mode;
use gsuq_cli::{Mode, RunConfig};

#[derive(Parser)]
#[command(name = "gsuq", version, about = "Geostatistical seismic inversion with metaparameter uncertainty")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic channel model, its seismic and wells.
    Synth(Common),
    /// Conventional inversion with a fixed variogram and target.
    InvertGsi(Common),
    /// Metaparameter sampling with nested inversions, then NAB.
    InvertMultiscale(Common),
    /// Recompute NAB products in an existing multi-scale output directory.
    Nab(Common),
    /// Conventional and multi-scale runs side by side.
    Compare(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Output directory; defaults to `paths.output` of the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
}

fn run(mode: Mode, args: &Common) -> gsuq::Result<()> {
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let out = args
        .out
        .clone()
        .or_else(|| cfg.paths.output.clone())
        .ok_or_else(|| Error::Config("no output directory: pass --out or set paths.output".into()))?;
    run_mode(&cfg, mode, &out)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let (mode, args) = match &cli.command {
        Command::Synth(a) => (Mode::Synth, a),
        Command::InvertGsi(a) => (Mode::Conventional, a),
        Command::InvertMultiscale(a) => (Mode::Multiscale, a),
        Command::Nab(a) => (Mode::Nab, a),
        Command::Compare(a) => (Mode::Compare, a),
    };
    match run(mode, args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ Error::Config(_)) => {
            eprintln!("gsuq: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("gsuq: {:#}", anyhow::Error::from(e));
            ExitCode::from(1)
        }
    }
}
