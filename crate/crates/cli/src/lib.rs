//! Pipeline commands behind the `sensoraudit` binary.
//!
//! A single master seed drives every stage through fixed offsets:
//! data `+0`, split `+1`, model init `+2`, training shuffle and dropout `+3`,
//! bootstrap `+4`. Experiment run `k` uses master seed `seed + k * seed_stride`.

mod config;
mod experiment;
mod stage;

use std::fs;
use std::path::{Path, PathBuf};

use sensoraudit::audit::{
    aggregate_attention, aggregate_attention_by_patient, attention_records, flag_laterality_bias, render_report,
    AggregationUnit, BiasFlag, ReportPaths, SensorImportanceMap, BILATERAL_PAIRS,
};
use sensoraudit::data::{load_cohort, split_patients, Manifest, SensorTrial, SplitManifest};
use sensoraudit::metrics::{evaluate, MetricsReport, PredictionSet};
use sensoraudit::model::{load_checkpoint, save_checkpoint, MultiStreamModel};
use sensoraudit::ndgrad::sigmoid;
use sensoraudit::train::{split_trials, train, TrainHistory};

pub use config::{AuditSettings, ExperimentSettings, MetricSettings, RunConfig, SplitSettings};
pub use experiment::{cmd_experiment, summary_table, ArmSummary, ExperimentSummary, RunSummary, SensorStat};
pub use stage::{config_hash, Stage};

/// Errors carry the process exit code they map to.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("config {path}: {msg}")]
    Config { path: PathBuf, msg: String },
    /// Existing outputs were produced under a different config.
    #[error("{0}")]
    Conflict(String),
    #[error(transparent)]
    Core(#[from] sensoraudit::Error),
}

impl CliError {
    /// 0 ok, 1 usage or config, 2 data, 3 numeric.
    pub fn exit_code(&self) -> i32 {
        use sensoraudit::Error as E;
        match self {
            CliError::Usage(_) | CliError::Config { .. } | CliError::Conflict(_) => 1,
            CliError::Core(E::Config(_)) => 1,
            CliError::Core(E::NonFinite { .. }) => 3,
            CliError::Core(_) => 2,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const SPLITS_FILE: &str = "splits.json";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const HISTORY_FILE: &str = "history.json";

pub(crate) fn write_json<T: serde::Serialize>(value: &T, path: &Path) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| sensoraudit::Error::Json {
        path: path.to_path_buf(),
        source: e,
    })?;
    text.push('\n');
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    fs::write(path, text).map_err(|e| io_err(path, e))?;
    Ok(())
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| {
        sensoraudit::Error::Json {
            path: path.to_path_buf(),
            source: e,
        }
        .into()
    })
}

pub(crate) fn io_err(path: &Path, source: std::io::Error) -> CliError {
    sensoraudit::Error::Io {
        path: path.to_path_buf(),
        source,
    }
    .into()
}

/// Write the synthetic cohort to `out/manifest.json` and `out/trials/`.
pub fn cmd_synth(cfg: &RunConfig, out: &Path) -> CliResult<Manifest> {
    let synth = cfg.synth_config();
    let stage = Stage::new(out, "synth", &synth)?;
    if stage.is_done(&[MANIFEST_FILE])? {
        return Ok(Manifest::load(&out.join(MANIFEST_FILE))?);
    }
    let manifest = sensoraudit::data::generate_synthetic(&synth, out)?;
    stage.mark_done()?;
    Ok(manifest)
}

/// Patient-level split of a manifest, written to `out/splits.json`.
pub fn cmd_split(cfg: &RunConfig, manifest_path: &Path, out: &Path) -> CliResult<SplitManifest> {
    let manifest = Manifest::load(manifest_path)?;
    let splits = split_patients(&manifest, &cfg.split_options())?;
    for w in &splits.warnings {
        eprintln!("warning: {w}");
    }
    fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    splits.save(&out.join(SPLITS_FILE))?;
    Ok(splits)
}

/// Splits from `splits_path` when given, otherwise recomputed from the config.
pub fn resolve_splits(cfg: &RunConfig, manifest: &Manifest, splits_path: Option<&Path>) -> CliResult<SplitManifest> {
    match splits_path {
        Some(p) => Ok(SplitManifest::load(p)?),
        None => Ok(split_patients(manifest, &cfg.split_options())?),
    }
}

/// Train a fresh model; writes the best checkpoint, history and the split used.
pub fn cmd_train(
    cfg: &RunConfig,
    manifest_path: &Path,
    splits_path: Option<&Path>,
    out: &Path,
) -> CliResult<(MultiStreamModel, TrainHistory)> {
    let (manifest, trials) = load_cohort(manifest_path)?;
    let splits = resolve_splits(cfg, &manifest, splits_path)?;
    train_stage(cfg, &splits, &trials, out)
}

pub(crate) fn train_stage(
    cfg: &RunConfig,
    splits: &SplitManifest,
    trials: &[SensorTrial],
    out: &Path,
) -> CliResult<(MultiStreamModel, TrainHistory)> {
    let model = MultiStreamModel::init(cfg.model.clone(), cfg.seed_for(config::INIT))?;
    let (model, history) = train(model, splits, trials, &cfg.train_config())?;
    fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    save_checkpoint(&model, &out.join(CHECKPOINT_FILE))?;
    write_json(&history, &out.join(HISTORY_FILE))?;
    splits.save(&out.join(SPLITS_FILE))?;
    Ok((model, history))
}

/// Score one split and write `predictions_<split>.csv` and `metrics_<split>.json`.
pub fn cmd_eval(
    cfg: &RunConfig,
    checkpoint: &Path,
    manifest_path: &Path,
    splits_path: Option<&Path>,
    split: &str,
    out: &Path,
) -> CliResult<MetricsReport> {
    let model = load_checkpoint(checkpoint)?;
    let (manifest, trials) = load_cohort(manifest_path)?;
    let chosen = select(cfg, &manifest, splits_path, &trials, split)?;
    eval_stage(cfg, &model, &chosen, split, out).map(|(_, r)| r)
}

fn select<'a>(
    cfg: &RunConfig,
    manifest: &Manifest,
    splits_path: Option<&Path>,
    trials: &'a [SensorTrial],
    split: &str,
) -> CliResult<Vec<&'a SensorTrial>> {
    if split == "all" {
        return Ok(trials.iter().collect());
    }
    if !["train", "val", "test"].contains(&split) {
        return Err(CliError::Usage(format!("unknown split {split:?}; expected train, val, test or all")));
    }
    let splits = resolve_splits(cfg, manifest, splits_path)?;
    Ok(split_trials(&splits, trials, split)?)
}

pub(crate) fn predictions(model: &MultiStreamModel, trials: &[&SensorTrial], cfg: &RunConfig) -> CliResult<PredictionSet> {
    let records = attention_records(model, trials, cfg.executor)?;
    Ok(PredictionSet::new(
        trials.iter().map(|t| t.trial_id.clone()).collect(),
        trials.iter().map(|t| t.patient_id.clone()).collect(),
        trials.iter().map(|t| t.label).collect(),
        records.iter().map(|r| sigmoid(r.logit)).collect(),
    )?)
}

pub(crate) fn eval_stage(
    cfg: &RunConfig,
    model: &MultiStreamModel,
    trials: &[&SensorTrial],
    split: &str,
    out: &Path,
) -> CliResult<(PredictionSet, MetricsReport)> {
    let preds = predictions(model, trials, cfg)?;
    let report = evaluate(&preds, &cfg.bootstrap_options(cfg.metrics.n_bootstrap, cfg.metrics.unit))?;
    fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    preds.save(&out.join(format!("predictions_{split}.csv")))?;
    write_json(&report, &out.join(format!("metrics_{split}.json")))?;
    Ok((preds, report))
}

#[derive(Clone, Debug)]
pub struct AuditOutput {
    pub map: SensorImportanceMap,
    pub flags: Vec<BiasFlag>,
    pub paths: ReportPaths,
}

/// Sensor Importance Map and laterality flags for one split.
///
/// Metrics are attached to the report when both classes are present.
pub fn cmd_audit(
    cfg: &RunConfig,
    checkpoint: &Path,
    manifest_path: &Path,
    splits_path: Option<&Path>,
    split: &str,
    out: &Path,
) -> CliResult<AuditOutput> {
    let model = load_checkpoint(checkpoint)?;
    let (manifest, trials) = load_cohort(manifest_path)?;
    let chosen = select(cfg, &manifest, splits_path, &trials, split)?;
    let preds = predictions(&model, &chosen, cfg)?;
    let metrics = evaluate(&preds, &cfg.bootstrap_options(cfg.metrics.n_bootstrap, cfg.metrics.unit)).ok();
    audit_stage(cfg, &model, &chosen, &manifest.task, metrics.as_ref(), out)
}

pub(crate) fn audit_stage(
    cfg: &RunConfig,
    model: &MultiStreamModel,
    trials: &[&SensorTrial],
    task: &str,
    metrics: Option<&MetricsReport>,
    out: &Path,
) -> CliResult<AuditOutput> {
    let records = attention_records(model, trials, cfg.executor)?;
    let opts = cfg.bootstrap_options(cfg.audit.n_bootstrap, Default::default());
    let map = match cfg.audit.unit {
        AggregationUnit::Trial => aggregate_attention(task, &records, &opts)?,
        AggregationUnit::Patient => {
            let pids: Vec<String> = trials.iter().map(|t| t.patient_id.clone()).collect();
            aggregate_attention_by_patient(task, &records, &pids, &opts)?
        }
    };
    let flags = flag_laterality_bias(&map, &BILATERAL_PAIRS, &cfg.audit.thresholds)?;
    let paths = render_report(&map, &flags, metrics, out)?;
    Ok(AuditOutput { map, flags, paths })
}
