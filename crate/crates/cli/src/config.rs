use std::path::Path;

use serde::{Deserialize, Serialize};

use sensoraudit::audit::{AggregationUnit, FlagThresholds};
use sensoraudit::data::{SplitOptions, SynthConfig};
use sensoraudit::exec::Executor;
use sensoraudit::metrics::{BootstrapOptions, BootstrapUnit};
use sensoraudit::model::ModelConfig;
use sensoraudit::train::TrainConfig;

use crate::{CliError, CliResult};

pub(crate) const DATA: u64 = 0;
pub(crate) const SPLIT: u64 = 1;
pub(crate) const INIT: u64 = 2;
pub(crate) const TRAIN: u64 = 3;
pub(crate) const BOOTSTRAP: u64 = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSettings {
    pub ratios: [f64; 3],
    pub stratified: bool,
}

impl Default for SplitSettings {
    fn default() -> Self {
        let d = SplitOptions::default();
        SplitSettings {
            ratios: d.ratios,
            stratified: d.stratified,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricSettings {
    pub n_bootstrap: usize,
    pub ci_level: f64,
    pub unit: BootstrapUnit,
}

impl Default for MetricSettings {
    fn default() -> Self {
        MetricSettings {
            n_bootstrap: 1000,
            ci_level: 0.95,
            unit: BootstrapUnit::Trial,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuditSettings {
    pub n_bootstrap: usize,
    pub unit: AggregationUnit,
    pub thresholds: FlagThresholds,
}

impl Default for AuditSettings {
    fn default() -> Self {
        AuditSettings {
            n_bootstrap: 1000,
            unit: AggregationUnit::Trial,
            thresholds: FlagThresholds::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSettings {
    pub n_seeds: usize,
    pub laterality_arms: Vec<f64>,
    pub seed_stride: u64,
    /// Runs per arm that must meet the recovery criteria.
    pub min_passing: usize,
    pub min_rf_mean: f64,
    pub max_lf_ci_high: f64,
    pub min_roc_auc: f64,
    /// Both feet must reach this mean attention in balanced arms.
    pub min_foot_mean: f64,
}

impl Default for ExperimentSettings {
    fn default() -> Self {
        ExperimentSettings {
            n_seeds: 5,
            laterality_arms: vec![1.0, 0.5],
            seed_stride: 100,
            min_passing: 4,
            min_rf_mean: 0.50,
            max_lf_ci_high: 0.10,
            min_roc_auc: 0.85,
            min_foot_mean: 0.15,
        }
    }
}

/// Everything a command needs, loaded from one JSON file.
///
/// The `seed` fields inside `synth` and `train` are ignored; both are
/// derived from the master seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub synth: SynthConfig,
    pub split: SplitSettings,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub metrics: MetricSettings,
    pub audit: AuditSettings,
    pub experiment: ExperimentSettings,
    pub executor: Executor,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            synth: SynthConfig::default(),
            split: SplitSettings::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            metrics: MetricSettings::default(),
            audit: AuditSettings::default(),
            experiment: ExperimentSettings::default(),
            executor: Executor::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let config_err = |msg: String| CliError::Config {
            path: path.to_path_buf(),
            msg,
        };
        let text = std::fs::read_to_string(path).map_err(|e| config_err(e.to_string()))?;
        let cfg: RunConfig = serde_json::from_str(&text).map_err(|e| config_err(e.to_string()))?;
        cfg.validate().map_err(|e| config_err(e.to_string()))?;
        Ok(cfg)
    }

    pub fn validate(&self) -> sensoraudit::Result<()> {
        self.synth_config().validate()?;
        self.model.validate()?;
        self.train_config().validate()?;
        let bad = |msg: String| Err(sensoraudit::Error::Config(msg));
        if self.metrics.n_bootstrap == 0 || self.audit.n_bootstrap == 0 {
            return bad("n_bootstrap must be positive".into());
        }
        if !(self.metrics.ci_level > 0.0 && self.metrics.ci_level < 1.0) {
            return bad(format!("ci_level must lie in (0, 1), got {}", self.metrics.ci_level));
        }
        let e = &self.experiment;
        if e.n_seeds == 0 || e.min_passing > e.n_seeds || e.laterality_arms.is_empty() {
            return bad("experiment needs n_seeds ≥ 1, min_passing ≤ n_seeds and at least one arm".into());
        }
        if e.laterality_arms.iter().any(|l| !(0.0..=1.0).contains(l)) {
            return bad(format!("laterality arms must lie in [0, 1]: {:?}", e.laterality_arms));
        }
        Ok(())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub(crate) fn seed_for(&self, offset: u64) -> u64 {
        self.seed.wrapping_add(offset)
    }

    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            seed: self.seed_for(DATA),
            ..self.synth.clone()
        }
    }

    pub fn split_options(&self) -> SplitOptions {
        SplitOptions {
            ratios: self.split.ratios,
            seed: self.seed_for(SPLIT),
            stratified: self.split.stratified,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed_for(TRAIN),
            executor: self.executor,
            ..self.train.clone()
        }
    }

    pub fn bootstrap_options(&self, n_bootstrap: usize, unit: BootstrapUnit) -> BootstrapOptions {
        BootstrapOptions {
            n_bootstrap,
            level: self.metrics.ci_level,
            seed: self.seed_for(BOOTSTRAP),
            unit,
            executor: self.executor,
            ..BootstrapOptions::default()
        }
    }
}
