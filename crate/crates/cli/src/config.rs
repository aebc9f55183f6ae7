//! Experiment configuration file.

use std::path::{Path, PathBuf};

use cepra_core::forward::{preset_configuration, ElectrodeLayout, ShellModel, SOURCE_MARGIN_MM};
use cepra_core::model::{Dipole, DipoleConfig, HyperParams, PriorDegree, SourceSpace, Updater};
use cepra_core::ramus::{RamusConfig, ScalingMode};
use cepra_core::{Error, Result};
use serde::{Deserialize, Serialize};

fn default_radii() -> [f64; 3] {
    ShellModel::ary().radii
}

fn default_conductivities() -> [f64; 3] {
    ShellModel::ary().conductivities
}

fn default_series_terms() -> usize {
    ShellModel::DEFAULT_SERIES_TERMS
}

fn default_electrodes() -> usize {
    128
}

fn default_cap_extent_deg() -> f64 {
    120.0
}

fn default_sources() -> usize {
    1000
}

fn default_one() -> u64 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelBlock {
    #[serde(default = "default_radii")]
    pub radii: [f64; 3],
    #[serde(default = "default_conductivities")]
    pub conductivities: [f64; 3],
    #[serde(default = "default_series_terms")]
    pub series_terms: usize,
    #[serde(default = "default_electrodes")]
    pub electrodes: usize,
    /// Polar extent of the electrode cap, degrees.
    #[serde(default = "default_cap_extent_deg")]
    pub cap_extent_deg: f64,
    /// Number of source positions.
    #[serde(default = "default_sources")]
    pub sources: usize,
    /// Radius of the source ball (mm); defaults to a margin inside the
    /// innermost shell.
    #[serde(default)]
    pub source_radius_mm: Option<f64>,
    #[serde(default = "default_one")]
    pub source_seed: u64,
    /// Precomputed binary leadfield; replaces the analytic build.
    #[serde(default)]
    pub leadfield: Option<PathBuf>,
}

impl Default for ModelBlock {
    fn default() -> Self {
        toml::from_str("").expect("defaults parse")
    }
}

impl ModelBlock {
    pub fn shell(&self) -> Result<ShellModel> {
        ShellModel::new(self.radii, self.conductivities, self.series_terms)
    }

    pub fn source_radius(&self) -> f64 {
        self.source_radius_mm.unwrap_or(self.radii[0] - SOURCE_MARGIN_MM)
    }

    pub fn electrode_layout(&self) -> Result<ElectrodeLayout> {
        ElectrodeLayout::fibonacci_cap(self.electrodes, self.radii[2], self.cap_extent_deg.to_radians())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthBlock {
    /// `I` or `II`.
    #[serde(default)]
    pub preset: Option<String>,
    #[serde(default)]
    pub dipoles: Option<Vec<Dipole>>,
    #[serde(default)]
    pub label: Option<String>,
}

impl TruthBlock {
    pub fn resolve(&self, space: &SourceSpace) -> Result<DipoleConfig> {
        match (&self.preset, &self.dipoles) {
            (Some(p), None) => {
                let mut cfg = preset_configuration(p, space)?;
                if let Some(l) = &self.label {
                    cfg.label = l.clone();
                }
                Ok(cfg)
            }
            (None, Some(d)) => DipoleConfig::new(d.clone(), self.label.clone().unwrap_or_else(|| "custom".into())),
            _ => Err(Error::Config("truth block needs exactly one of `preset` or `dipoles`".into())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseBlock {
    /// Relative noise standard deviations.
    pub levels: Vec<f64>,
    pub realizations: usize,
    /// Base seed of the noise realizations.
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodConfig {
    /// Output directory name; defaults to `<updater>-q<q>`.
    #[serde(default)]
    pub name: Option<String>,
    #[serde(flatten)]
    pub params: HyperParams,
}

impl MethodConfig {
    pub fn label(&self) -> String {
        self.name.clone().unwrap_or_else(|| format!("{}-q{}", self.params.updater, self.params.q))
    }
}

fn default_true() -> bool {
    true
}

fn default_desk_decompositions() -> usize {
    25
}

/// RAMUS settings of an experiment. Defaults follow [`RamusConfig`] except
/// for the decomposition count, which is scaled down to desk size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RamusBlock {
    /// Solve with plain CEP when false.
    #[serde(default = "default_true")]
    pub enabled: bool,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default)]
    pub levels: Option<usize>,
    #[serde(default)]
    pub sparsity: Option<f64>,
    #[serde(default = "default_desk_decompositions")]
    pub decompositions: usize,
    #[serde(default)]
    pub coarsest_count: Option<usize>,
    #[serde(default)]
    pub scaling: ScalingMode,
}

impl Default for RamusBlock {
    fn default() -> Self {
        toml::from_str("").expect("defaults parse")
    }
}

impl RamusBlock {
    pub fn config(&self) -> RamusConfig {
        let base = RamusConfig::default();
        RamusConfig {
            levels: self.levels,
            sparsity: self.sparsity.unwrap_or(base.sparsity),
            decompositions: self.decompositions,
            coarsest_count: self.coarsest_count.unwrap_or(base.coarsest_count),
            scaling: self.scaling,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub model: ModelBlock,
    pub truth: TruthBlock,
    pub noise: NoiseBlock,
    /// One entry per (updater, q) cell.
    pub methods: Vec<MethodConfig>,
    #[serde(default)]
    pub ramus: RamusBlock,
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses `path`; relative paths inside resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg = Self::from_toml(&std::fs::read_to_string(path)?)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if cfg.output_dir.is_relative() {
            cfg.output_dir = base.join(&cfg.output_dir);
        }
        if let Some(lf) = &cfg.model.leadfield {
            if lf.is_relative() {
                cfg.model.leadfield = Some(base.join(lf));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.noise.realizations == 0 {
            return Err(Error::Config("noise.realizations must be at least 1".into()));
        }
        if self.noise.levels.is_empty() {
            return Err(Error::Config("noise.levels must not be empty".into()));
        }
        if let Some(l) = self.noise.levels.iter().find(|l| !(**l > 0.0 && **l < 1.0)) {
            return Err(Error::Config(format!("noise level {l} outside (0, 1)")));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("at least one method is required".into()));
        }
        let mut labels: Vec<String> = self.methods.iter().map(MethodConfig::label).collect();
        labels.sort();
        if labels.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("method names must be unique".into()));
        }
        for m in &self.methods {
            m.params.validate()?;
        }
        if self.truth.preset.is_some() == self.truth.dipoles.is_some() {
            return Err(Error::Config("truth block needs exactly one of `preset` or `dipoles`".into()));
        }
        self.ramus.config().validate()?;
        if let Some(lf) = &self.model.leadfield {
            if !lf.is_file() {
                return Err(Error::Config(format!("leadfield {} not found", lf.display())));
            }
        } else {
            self.model.shell()?;
        }
        Ok(())
    }

    /// Scales the run up to the full protocol: 10000 sources, 100
    /// decompositions and 100 realizations per level.
    pub fn paper_scale(mut self) -> Self {
        self.model.sources = 10_000;
        self.ramus.decompositions = 100;
        self.noise.realizations = 100;
        self
    }
}

/// The four (updater, q) cells with the preset hyperprior.
pub fn default_methods(sigma: f64) -> Vec<MethodConfig> {
    use cepra_core::hyperprior::{preset_theta, PRESET_KAPPA};
    let mut out = Vec::new();
    for updater in [Updater::Em, Updater::Ias] {
        for q in [PriorDegree::One, PriorDegree::Two] {
            let params = HyperParams::new(q, PRESET_KAPPA, preset_theta(q), sigma, updater).expect("preset parameters");
            out.push(MethodConfig { name: None, params });
        }
    }
    out
}
