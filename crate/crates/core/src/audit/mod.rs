//! Cohort-level Sensor Importance Maps and laterality-confound flags.

mod report;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::{SensorTrial, SENSORS};
use crate::error::{Error, Result};
use crate::exec::{substream, Executor};
use crate::metrics::{bootstrap_ci, BootstrapOptions, MetricWithCI};
use crate::model::{AttentionRecord, MultiStreamModel};

pub use report::{render_report, render_svg, report_json, ReportPaths};

/// Unit over which attention is averaged and resampled.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AggregationUnit {
    #[default]
    Trial,
    /// Average within each patient first, then across patients.
    Patient,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensorImportance {
    pub sensor: String,
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensorImportanceMap {
    pub task: String,
    pub n_trials: usize,
    pub unit: AggregationUnit,
    /// In [`SENSORS`] order.
    pub sensors: Vec<SensorImportance>,
}

impl SensorImportanceMap {
    pub fn get(&self, sensor: &str) -> Option<&SensorImportance> {
        self.sensors.iter().find(|s| s.sensor == sensor)
    }

    pub fn means(&self) -> Vec<f64> {
        self.sensors.iter().map(|s| s.mean).collect()
    }
}

/// Eval-mode attention for every trial.
pub fn attention_records(model: &MultiStreamModel, trials: &[&SensorTrial], executor: Executor) -> Result<Vec<AttentionRecord>> {
    executor.try_map(trials.len(), |i| model.forward(trials[i], false, &mut substream(0, 0)))
}

fn check_record(r: &AttentionRecord, n: usize) -> Result<()> {
    if r.alpha.len() != n {
        return Err(Error::dim("aggregate_attention", n, r.alpha.len()));
    }
    let sum: f64 = r.alpha.iter().sum();
    if r.alpha.iter().any(|a| !(*a >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "attention of {} is not on the simplex (sum {sum})",
            r.trial_id
        )));
    }
    Ok(())
}

/// Mean attention per sensor over trials, with percentile bootstrap CIs.
///
/// All sensors share the same resamples, so every bootstrap replicate of the
/// map is itself a point on the simplex.
pub fn aggregate_attention(task: &str, records: &[AttentionRecord], opts: &BootstrapOptions) -> Result<SensorImportanceMap> {
    let rows: Vec<Vec<f64>> = records.iter().map(|r| r.alpha.clone()).collect();
    aggregate_rows(task, records, rows, records.len(), AggregationUnit::Trial, opts)
}

/// As [`aggregate_attention`], averaging within each patient before the
/// cohort mean and resampling patients.
pub fn aggregate_attention_by_patient(
    task: &str,
    records: &[AttentionRecord],
    patient_ids: &[String],
    opts: &BootstrapOptions,
) -> Result<SensorImportanceMap> {
    if patient_ids.len() != records.len() {
        return Err(Error::dim("aggregate_attention_by_patient", records.len(), patient_ids.len()));
    }
    let n = SENSORS.len();
    let mut by_patient: BTreeMap<&str, (Vec<f64>, usize)> = BTreeMap::new();
    for (r, p) in records.iter().zip(patient_ids) {
        check_record(r, n)?;
        let entry = by_patient.entry(p).or_insert_with(|| (vec![0.0; n], 0));
        entry.0.iter_mut().zip(&r.alpha).for_each(|(acc, a)| *acc += a);
        entry.1 += 1;
    }
    let rows = by_patient
        .into_values()
        .map(|(sum, k)| sum.into_iter().map(|s| s / k as f64).collect())
        .collect();
    aggregate_rows(task, records, rows, records.len(), AggregationUnit::Patient, opts)
}

fn aggregate_rows(
    task: &str,
    records: &[AttentionRecord],
    rows: Vec<Vec<f64>>,
    n_trials: usize,
    unit: AggregationUnit,
    opts: &BootstrapOptions,
) -> Result<SensorImportanceMap> {
    if records.is_empty() {
        return Err(Error::Empty("attention records"));
    }
    let n = SENSORS.len();
    for r in records {
        check_record(r, n)?;
    }
    let mut sensors = Vec::with_capacity(n);
    for (s, name) in SENSORS.iter().enumerate() {
        let column: Vec<f64> = rows.iter().map(|r| r[s]).collect();
        let ci: MetricWithCI = bootstrap_ci(column.len(), None, opts, |idx| {
            Ok(idx.iter().map(|&i| column[i]).sum::<f64>() / idx.len() as f64)
        })?;
        sensors.push(SensorImportance {
            sensor: name.to_string(),
            mean: ci.point,
            ci_low: ci.ci_low,
            ci_high: ci.ci_high,
        });
    }
    Ok(SensorImportanceMap {
        task: task.to_string(),
        n_trials,
        unit,
        sensors,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Info,
    Warning,
    Critical,
}

impl Severity {
    pub fn as_str(self) -> &'static str {
        match self {
            Severity::Info => "info",
            Severity::Warning => "warning",
            Severity::Critical => "critical",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasFlag {
    pub pair: [String; 2],
    pub sensor: String,
    pub partner: String,
    pub rule: String,
    pub severity: Severity,
    pub neglected_ci_high: f64,
    pub partner_mean: f64,
    pub rationale: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlagThresholds {
    pub neglect: f64,
    pub dominance: f64,
}

impl Default for FlagThresholds {
    fn default() -> Self {
        FlagThresholds {
            neglect: 0.05,
            dominance: 0.50,
        }
    }
}

pub const BILATERAL_PAIRS: [(&str, &str); 1] = [("LF", "RF")];

/// Flag bilateral pairs where one side is confidently ignored.
///
/// A sensor whose `ci_high` is below the neglect threshold raises a warning,
/// upgraded to critical when its partner's mean exceeds the dominance
/// threshold. Both sides of each pair are checked.
pub fn flag_laterality_bias(
    map: &SensorImportanceMap,
    pairs: &[(&str, &str)],
    thresholds: &FlagThresholds,
) -> Result<Vec<BiasFlag>> {
    let mut flags = Vec::new();
    for &(a, b) in pairs {
        let lookup = |s: &str| {
            map.get(s)
                .ok_or_else(|| Error::Config(format!("sensor {s:?} is not in the importance map")))
        };
        let (sa, sb) = (lookup(a)?, lookup(b)?);
        for (x, y) in [(sa, sb), (sb, sa)] {
            if !(x.ci_high < thresholds.neglect) {
                continue;
            }
            let dominant = y.mean > thresholds.dominance;
            let (severity, rule) = if dominant {
                (Severity::Critical, "neglect+dominance")
            } else {
                (Severity::Warning, "neglect")
            };
            let mut rationale = format!(
                "{} attention ci_high {:.4} < {:.2}",
                x.sensor, x.ci_high, thresholds.neglect
            );
            if dominant {
                rationale += &format!(
                    " while {} mean {:.4} > {:.2}; possible laterality confound",
                    y.sensor, y.mean, thresholds.dominance
                );
            } else {
                rationale += &format!(" ({} mean {:.4})", y.sensor, y.mean);
            }
            flags.push(BiasFlag {
                pair: [a.to_string(), b.to_string()],
                sensor: x.sensor.clone(),
                partner: y.sensor.clone(),
                rule: rule.to_string(),
                severity,
                neglected_ci_high: x.ci_high,
                partner_mean: y.mean,
                rationale,
            });
        }
    }
    Ok(flags)
}
