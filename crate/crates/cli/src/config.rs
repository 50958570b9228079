//! Run configuration, read from TOML. Relative paths resolve against the
//! directory holding the config file.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use gsuq::dss::TargetDistribution;
use gsuq::gsi::GsiConfig;
use gsuq::metaspace::{build_target, GmmMode, GmmSpec, MetaSpace, PriorBox, PriorParam, DEFAULT_SIGMA2, DEFAULT_TARGET_POINTS};
use gsuq::pso::PsoConfig;
use gsuq::synthetic::SyntheticSpec;
use gsuq::variogram::{VariogramKind, VariogramModel};
use gsuq::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub observed: Option<PathBuf>,
    pub wells: Option<PathBuf>,
    pub wavelet: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

/// Fixed spatial model and target of a conventional run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConventionalConfig {
    pub kind: VariogramKind,
    pub range_h_m: f64,
    /// Second horizontal range; defaults to `range_h_m`.
    pub range_h2_m: Option<f64>,
    pub range_v_ms: f64,
    pub azimuth_deg: f64,
    pub nugget: f64,
    /// Mixture target; when absent the target is the conditioning-well
    /// histogram.
    pub gmm: Option<Vec<GmmMode>>,
}

impl Default for ConventionalConfig {
    fn default() -> Self {
        ConventionalConfig {
            kind: VariogramKind::Spherical,
            range_h_m: 750.0,
            range_h2_m: None,
            range_v_ms: 20.0,
            azimuth_deg: 0.0,
            nugget: 0.0,
            gmm: None,
        }
    }
}

impl ConventionalConfig {
    pub fn target(&self, well_ip: &[f64]) -> Result<TargetDistribution> {
        match &self.gmm {
            Some(modes) => build_target(&GmmSpec::new(modes.clone())?, DEFAULT_TARGET_POINTS),
            None => TargetDistribution::from_samples(well_ip),
        }
    }

    /// The sill is the target variance less the nugget.
    pub fn model(&self, target: &TargetDistribution) -> Result<VariogramModel> {
        let var = target.variance();
        if !(self.nugget >= 0.0 && self.nugget < var) {
            return Err(Error::Config(format!(
                "nugget {} must lie in [0, target variance {var})",
                self.nugget
            )));
        }
        VariogramModel::new(
            self.kind,
            self.range_h_m,
            self.range_h2_m.unwrap_or(self.range_h_m),
            self.range_v_ms,
            self.azimuth_deg,
            var - self.nugget,
            self.nugget,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MultiscaleConfig {
    pub kind: VariogramKind,
    /// Inner GSI run per evaluated metaparameter vector.
    pub gsi: GsiConfig,
    pub target_points: usize,
    /// Repeat inner runs at the prior midpoint used to rescale `sigma2` so
    /// that the repeat spread of the misfit is one unit; 0 keeps `sigma2`.
    pub calibrate_sigma2: usize,
}

impl Default for MultiscaleConfig {
    fn default() -> Self {
        MultiscaleConfig {
            kind: VariogramKind::Spherical,
            gsi: GsiConfig {
                n_iterations: 3,
                ensemble_size: 5,
                cc_stop: 1.0,
                persist: false,
            },
            target_points: DEFAULT_TARGET_POINTS,
            calibrate_sigma2: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NabSection {
    pub walkers: usize,
    pub resamples: usize,
    pub burn_in: usize,
    pub marginal_bins: usize,
}

impl Default for NabSection {
    fn default() -> Self {
        NabSection {
            walkers: gsuq::nab::DEFAULT_WALKERS,
            resamples: gsuq::nab::DEFAULT_RESAMPLES,
            burn_in: gsuq::nab::DEFAULT_BURN_IN,
            marginal_bins: 20,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NeighborhoodConfig {
    pub max_data: usize,
}

impl Default for NeighborhoodConfig {
    fn default() -> Self {
        NeighborhoodConfig { max_data: 16 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub sigma2: f64,
    /// Wells held out of conditioning and used for validation only.
    pub blind_wells: Vec<String>,
    /// Conditioning wells; empty means every well that is not blind.
    pub conditioning_wells: Vec<String>,
    pub paths: Paths,
    /// Optional; must match the observed volume when given.
    pub grid: Option<gsuq::grid::Grid3>,
    pub neighborhood: NeighborhoodConfig,
    pub gsi: GsiConfig,
    pub conventional: ConventionalConfig,
    pub multiscale: MultiscaleConfig,
    pub pso: PsoConfig,
    pub prior: Vec<PriorParam>,
    pub nab: NabSection,
    pub synthetic: Option<SyntheticSpec>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            sigma2: DEFAULT_SIGMA2,
            blind_wells: Vec::new(),
            conditioning_wells: Vec::new(),
            paths: Paths::default(),
            grid: None,
            neighborhood: NeighborhoodConfig::default(),
            gsi: GsiConfig::default(),
            conventional: ConventionalConfig::default(),
            multiscale: MultiscaleConfig::default(),
            pso: PsoConfig::default(),
            prior: Vec::new(),
            nab: NabSection::default(),
            synthetic: None,
        }
    }
}

/// What a command needs from the config.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Synth,
    Conventional,
    Multiscale,
    Nab,
    Compare,
}

fn config_err(e: impl std::fmt::Display) -> Error {
    Error::Config(e.to_string())
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(config_err)
    }

    /// Reads a config and resolves its relative paths.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new("")));
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        for p in [
            &mut self.paths.observed,
            &mut self.paths.wells,
            &mut self.paths.wavelet,
            &mut self.paths.output,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(config_err)
    }

    pub fn prior_box(&self) -> Result<PriorBox> {
        PriorBox::new(self.prior.clone()).map_err(config_err)
    }

    pub fn meta_space(&self) -> Result<MetaSpace> {
        let mut space = MetaSpace::new(self.prior_box()?, self.multiscale.kind).map_err(config_err)?;
        space.n_target_points = self.multiscale.target_points;
        Ok(space)
    }

    fn require(&self, p: &Option<PathBuf>, key: &str) -> Result<()> {
        match p {
            None => Err(Error::Config(format!("paths.{key} is required"))),
            Some(p) if !p.is_file() => Err(Error::Config(format!("paths.{key}: {} does not exist", p.display()))),
            Some(_) => Ok(()),
        }
    }

    /// Checks everything `mode` depends on; all failures are config errors.
    pub fn validate(&self, mode: Mode) -> Result<()> {
        if !(self.sigma2.is_finite() && self.sigma2 > 0.0) {
            return Err(Error::Config(format!("sigma2 must be positive, got {}", self.sigma2)));
        }
        let blind: BTreeSet<&String> = self.blind_wells.iter().collect();
        if blind.len() != self.blind_wells.len() {
            return Err(Error::Config("blind_wells lists a well twice".into()));
        }
        if let Some(w) = self.conditioning_wells.iter().find(|w| blind.contains(w)) {
            return Err(Error::Config(format!("well {w} is both blind and conditioning")));
        }
        if self.neighborhood.max_data == 0 {
            return Err(Error::Config("neighborhood.max_data must be at least 1".into()));
        }
        if let Some(g) = &self.grid {
            g.validate().map_err(config_err)?;
        }
        if mode == Mode::Synth {
            return match &self.synthetic {
                None => Err(Error::Config("the [synthetic] section is required".into())),
                Some(s) => s.validate().map_err(config_err),
            };
        }
        self.require(&self.paths.wells, "wells")?;
        if mode != Mode::Nab {
            self.require(&self.paths.observed, "observed")?;
            self.require(&self.paths.wavelet, "wavelet")?;
        }
        if matches!(mode, Mode::Conventional | Mode::Compare) {
            self.gsi.validate().map_err(config_err)?;
            let c = &self.conventional;
            for (name, x) in [("range_h_m", c.range_h_m), ("range_v_ms", c.range_v_ms)] {
                if !(x.is_finite() && x > 0.0) {
                    return Err(Error::Config(format!("conventional.{name} must be positive")));
                }
            }
            if let Some(modes) = &c.gmm {
                GmmSpec::new(modes.clone()).map_err(config_err)?;
            }
        }
        if matches!(mode, Mode::Multiscale | Mode::Compare | Mode::Nab) {
            self.meta_space()?;
            if self.nab.walkers == 0 || self.nab.resamples == 0 || self.nab.marginal_bins == 0 {
                return Err(Error::Config("nab walkers, resamples and marginal_bins must be positive".into()));
            }
        }
        if matches!(mode, Mode::Multiscale | Mode::Compare) {
            self.multiscale.gsi.validate().map_err(config_err)?;
            self.pso.validate().map_err(config_err)?;
            if self.multiscale.calibrate_sigma2 == 1 {
                return Err(Error::Config("multiscale.calibrate_sigma2 needs 0 or at least 2 repeats".into()));
            }
            if self.multiscale.target_points < 64 {
                return Err(Error::Config("multiscale.target_points must be at least 64".into()));
            }
        }
        Ok(())
    }
}
