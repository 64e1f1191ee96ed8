//! Run configuration files.
//!
//! Both configs are TOML. Unknown keys are errors. Relative paths are
//! resolved against the directory of the config file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use selbias::data::MissingPolicy;
use selbias::outcome::OutcomeSpec;
use selbias::pipeline::WeightSpec;
use selbias::resampling::BootstrapConfig;
use selbias::simulation::SimulationConfig;
use selbias::weights::MembershipMethod;

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RepresentativeKind {
    /// Survey rows with sampling weights, expanded into a pseudopopulation.
    #[default]
    SurveyWithWeights,
    /// Already expanded; every row counts once.
    Pseudopopulation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Representative {
    pub kind: RepresentativeKind,
    /// Column of sampling weights; required for `survey_with_weights`.
    #[serde(default)]
    pub weight_column: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceChoice {
    Design,
    Proposed,
    Bootstrap,
    #[default]
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BalanceSection {
    #[serde(default = "all_methods")]
    pub methods: Vec<MembershipMethod>,
}

impl Default for BalanceSection {
    fn default() -> Self {
        BalanceSection { methods: all_methods() }
    }
}

fn all_methods() -> Vec<MembershipMethod> {
    SimulationConfig::default().methods
}

fn default_level() -> f64 {
    0.95
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub convenience_csv: PathBuf,
    pub representative_csv: PathBuf,
    pub schema: PathBuf,
    pub representative: Representative,
    /// What to do with rows that have an empty cell.
    #[serde(default)]
    pub missing: MissingPolicy,
    #[serde(default)]
    pub weights: WeightSpec,
    /// One entry per scientific outcome model.
    #[serde(default)]
    pub outcome: Vec<OutcomeSpec>,
    #[serde(default)]
    pub variance: VarianceChoice,
    #[serde(default)]
    pub bootstrap: BootstrapConfig,
    /// Imputed versions of the convenience sample, pooled by Rubin's rules.
    #[serde(default)]
    pub imputed_convenience_csvs: Vec<PathBuf>,
    #[serde(default = "default_level")]
    pub confidence_level: f64,
    #[serde(default)]
    pub balance: BalanceSection,
    /// Also write every bootstrap replicate's coefficients.
    #[serde(default)]
    pub dump_replicates: bool,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    #[serde(default = "default_population_size")]
    pub population_size: usize,
    /// Population CSV with the columns of the synthetic population; when
    /// absent a synthetic population is generated.
    #[serde(default)]
    pub population_csv: Option<PathBuf>,
    #[serde(default)]
    pub simulation: SimulationConfig,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

fn default_population_size() -> usize {
    40_000
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig { population_size: default_population_size(), population_csv: None, simulation: Default::default(), output_dir: None }
    }
}

pub fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::config(format!("cannot read `{}`: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::config(format!("`{}`: {e}", path.display())))
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let mut cfg: RunConfig = read_toml(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.convenience_csv = resolve(base, &cfg.convenience_csv);
        cfg.representative_csv = resolve(base, &cfg.representative_csv);
        cfg.schema = resolve(base, &cfg.schema);
        cfg.imputed_convenience_csvs = cfg.imputed_convenience_csvs.iter().map(|p| resolve(base, p)).collect();
        cfg.output_dir = cfg.output_dir.map(|p| resolve(base, &p));
        Ok(cfg)
    }

    /// Checks that need no data, run before any computation.
    pub fn validate(&self, needs_outcome: bool) -> Result<(), CliError> {
        let proposed = matches!(self.variance, VarianceChoice::Proposed | VarianceChoice::All);
        if needs_outcome && proposed && !self.weights.method.is_logistic_family() {
            return Err(CliError::config(format!(
                "the proposed variance needs logistic or cbps weights, not `{}`",
                self.weights.method
            )));
        }
        if needs_outcome && self.outcome.is_empty() {
            return Err(CliError::config("no [[outcome]] section"));
        }
        if self.representative.kind == RepresentativeKind::SurveyWithWeights && self.representative.weight_column.is_none() {
            return Err(CliError::config("representative.weight_column is required for survey_with_weights"));
        }
        if self.imputed_convenience_csvs.len() == 1 {
            return Err(CliError::config("pooling needs at least 2 imputed files"));
        }
        if !(self.confidence_level > 0.0 && self.confidence_level < 1.0) {
            return Err(CliError::config("confidence_level must lie in (0, 1)"));
        }
        if self.bootstrap.n_replicates == 1 {
            return Err(CliError::config("bootstrap.n_replicates must be 0 or at least 2"));
        }
        Ok(())
    }
}

impl SimulateConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let mut cfg: SimulateConfig = read_toml(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.population_csv = cfg.population_csv.map(|p| resolve(base, &p));
        cfg.output_dir = cfg.output_dir.map(|p| resolve(base, &p));
        Ok(cfg)
    }
}

/// SHA-256 of the effective configuration (after flag overrides).
pub fn config_hash<T: Serialize>(cfg: &T) -> String {
    let json = serde_json::to_vec(cfg).expect("configs serialize");
    hex::encode(Sha256::digest(&json))
}
