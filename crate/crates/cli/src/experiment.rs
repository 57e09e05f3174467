use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use sensoraudit::audit::Severity;
use sensoraudit::data::{split_patients, synthesize_trials};
use sensoraudit::train::split_trials;

use crate::{audit_stage, eval_stage, io_err, read_json, train_stage, write_json, CliResult, RunConfig, Stage};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub master_seed: u64,
    pub laterality_fraction_right: f64,
    pub importance: Vec<SensorStat>,
    pub roc_auc: f64,
    pub critical_flag: bool,
    pub flagged: Vec<String>,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensorStat {
    pub sensor: String,
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl RunSummary {
    pub fn sensor(&self, name: &str) -> &SensorStat {
        self.importance
            .iter()
            .find(|s| s.sensor == name)
            .expect("every run reports all sensors")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub laterality_fraction_right: f64,
    /// `confound` when every patient's anomaly sits on one foot, else `balanced`.
    pub kind: String,
    pub runs: Vec<RunSummary>,
    pub n_passing: usize,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub seed: u64,
    pub config_hash: String,
    pub arms: Vec<ArmSummary>,
    pub pass: bool,
}

fn is_confound(laterality: f64) -> bool {
    laterality == 0.0 || laterality == 1.0
}

fn judge(cfg: &RunConfig, run: &RunSummary) -> bool {
    let e = &cfg.experiment;
    let lat = run.laterality_fraction_right;
    if is_confound(lat) {
        let (dominant, neglected) = if lat == 1.0 { ("RF", "LF") } else { ("LF", "RF") };
        run.sensor(dominant).mean >= e.min_rf_mean
            && run.sensor(neglected).ci_high < e.max_lf_ci_high
            && run.critical_flag
            && run.roc_auc >= e.min_roc_auc
    } else {
        !run.critical_flag && run.sensor("LF").mean >= e.min_foot_mean && run.sensor("RF").mean >= e.min_foot_mean
    }
}

/// One synth → split → train → eval → audit pipeline, skipped when its
/// outputs already exist under the same config.
fn run_one(cfg: &RunConfig, dir: &Path) -> CliResult<RunSummary> {
    let stage = Stage::new(dir, "run", cfg)?;
    let summary_path = dir.join("run.json");
    if stage.is_done(&["run.json"])? {
        return read_json(&summary_path);
    }
    let cohort = synthesize_trials(&cfg.synth_config())?;
    let manifest = cohort.manifest(&cfg.synth.task);
    let splits = split_patients(&manifest, &cfg.split_options())?;
    let (model, history) = train_stage(cfg, &splits, &cohort.trials, dir)?;
    let test = split_trials(&splits, &cohort.trials, "test")?;
    let (_, metrics) = eval_stage(cfg, &model, &test, "test", dir)?;
    let audit = audit_stage(cfg, &model, &test, &cfg.synth.task, Some(&metrics), dir)?;

    let mut run = RunSummary {
        master_seed: cfg.seed,
        laterality_fraction_right: cfg.synth.laterality_fraction_right,
        importance: audit
            .map
            .sensors
            .iter()
            .map(|s| SensorStat {
                sensor: s.sensor.clone(),
                mean: s.mean,
                ci_low: s.ci_low,
                ci_high: s.ci_high,
            })
            .collect(),
        roc_auc: metrics.roc_auc.point,
        critical_flag: audit.flags.iter().any(|f| f.severity == Severity::Critical),
        flagged: audit
            .flags
            .iter()
            .map(|f| format!("{}:{}", f.sensor, f.severity.as_str()))
            .collect(),
        best_epoch: history.best_epoch,
        epochs_run: history.val_loss.len(),
        pass: false,
    };
    run.pass = judge(cfg, &run);
    write_json(&run, &summary_path)?;
    stage.mark_done()?;
    Ok(run)
}

/// The planted-confound experiment: every laterality arm × `n_seeds` runs.
///
/// Writes one directory per run plus `summary.json` and a plain-text
/// `summary.txt` table under `out`.
pub fn cmd_experiment(cfg: &RunConfig, out: &Path) -> CliResult<ExperimentSummary> {
    cfg.validate()?;
    let e = &cfg.experiment;
    let mut arms = Vec::new();
    for &lat in &e.laterality_arms {
        let mut runs = Vec::new();
        for k in 0..e.n_seeds {
            let mut run_cfg = cfg.clone().with_seed(cfg.seed.wrapping_add(k as u64 * e.seed_stride));
            run_cfg.synth.laterality_fraction_right = lat;
            let dir = out.join(format!("laterality_{lat:.2}")).join(format!("seed_{}", run_cfg.seed));
            runs.push(run_one(&run_cfg, &dir)?);
        }
        let n_passing = runs.iter().filter(|r| r.pass).count();
        arms.push(ArmSummary {
            laterality_fraction_right: lat,
            kind: if is_confound(lat) { "confound" } else { "balanced" }.to_string(),
            runs,
            n_passing,
            pass: n_passing >= e.min_passing,
        });
    }
    let summary = ExperimentSummary {
        seed: cfg.seed,
        config_hash: crate::config_hash(cfg),
        pass: arms.iter().all(|a| a.pass),
        arms,
    };
    write_json(&summary, &out.join("summary.json"))?;
    let table = summary_table(&summary);
    let path = out.join("summary.txt");
    fs::write(&path, table).map_err(|e| io_err(&path, e))?;
    Ok(summary)
}

pub fn summary_table(s: &ExperimentSummary) -> String {
    let mut t = String::new();
    let _ = writeln!(
        t,
        "{:>10} {:>6} {:>8} {:>8} {:>8} {:>8} {:>9} {:>7} {:>8} {:>5}",
        "laterality", "seed", "HE", "LB", "LF", "RF", "LF ci_hi", "ROC-AUC", "critical", "pass"
    );
    for arm in &s.arms {
        for r in &arm.runs {
            let _ = writeln!(
                t,
                "{:>10.2} {:>6} {:>8.3} {:>8.3} {:>8.3} {:>8.3} {:>9.3} {:>7.3} {:>8} {:>5}",
                arm.laterality_fraction_right,
                r.master_seed,
                r.sensor("HE").mean,
                r.sensor("LB").mean,
                r.sensor("LF").mean,
                r.sensor("RF").mean,
                r.sensor("LF").ci_high,
                r.roc_auc,
                r.critical_flag,
                r.pass
            );
        }
        let _ = writeln!(
            t,
            "{:>10.2} {} arm: {}/{} runs pass ({})",
            arm.laterality_fraction_right,
            arm.kind,
            arm.n_passing,
            arm.runs.len(),
            if arm.pass { "PASS" } else { "FAIL" }
        );
    }
    t
}
