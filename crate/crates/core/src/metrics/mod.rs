//! Imbalance-robust binary classification metrics.

mod bootstrap;

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use bootstrap::{bootstrap_ci, percentile, BootstrapOptions, BootstrapUnit, MetricWithCI};

/// Parallel columns of per-trial predictions.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PredictionSet {
    pub trial_id: Vec<String>,
    pub patient_id: Vec<String>,
    pub label: Vec<u8>,
    /// Sigmoid of the logit.
    pub score: Vec<f64>,
}

impl PredictionSet {
    pub fn new(trial_id: Vec<String>, patient_id: Vec<String>, label: Vec<u8>, score: Vec<f64>) -> Result<Self> {
        let n = label.len();
        if trial_id.len() != n || patient_id.len() != n || score.len() != n {
            return Err(Error::dim("PredictionSet", n, format!("{}/{}/{}", trial_id.len(), patient_id.len(), score.len())));
        }
        if let Some(s) = score.iter().find(|s| !(0.0..=1.0).contains(*s)) {
            return Err(Error::Config(format!("score {s} outside [0, 1]")));
        }
        if let Some(l) = label.iter().find(|&&l| l > 1) {
            return Err(Error::Config(format!("label {l} is not 0/1")));
        }
        Ok(PredictionSet {
            trial_id,
            patient_id,
            label,
            score,
        })
    }

    /// Anonymous rows, for tests and fixtures.
    pub fn from_scores(label: Vec<u8>, score: Vec<f64>) -> Result<Self> {
        let ids: Vec<String> = (0..label.len()).map(|i| format!("r{i}")).collect();
        PredictionSet::new(ids.clone(), ids, label, score)
    }

    pub fn len(&self) -> usize {
        self.label.len()
    }

    pub fn is_empty(&self) -> bool {
        self.label.is_empty()
    }

    /// Rows at `idx` (repeats allowed).
    pub fn subset(&self, idx: &[usize]) -> PredictionSet {
        PredictionSet {
            trial_id: idx.iter().map(|&i| self.trial_id[i].clone()).collect(),
            patient_id: idx.iter().map(|&i| self.patient_id[i].clone()).collect(),
            label: idx.iter().map(|&i| self.label[i]).collect(),
            score: idx.iter().map(|&i| self.score[i]).collect(),
        }
    }

    /// CSV with header `trial_id,patient_id,label,score`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("trial_id,patient_id,label,score\n");
        for i in 0..self.len() {
            writeln!(out, "{},{},{},{:.16e}", self.trial_id[i], self.patient_id[i], self.label[i], self.score[i]).unwrap();
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let err = |row: usize, col: usize, msg: &str| Error::Parse {
            path: path.to_path_buf(),
            row,
            col,
            msg: msg.to_string(),
        };
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some("trial_id,patient_id,label,score") {
            return Err(err(1, 1, "expected header trial_id,patient_id,label,score"));
        }
        let (mut t, mut p, mut l, mut s) = (vec![], vec![], vec![], vec![]);
        for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != 4 {
                return Err(err(i + 2, cells.len(), "expected 4 columns"));
            }
            t.push(cells[0].to_string());
            p.push(cells[1].to_string());
            l.push(cells[2].trim().parse().map_err(|_| err(i + 2, 3, "bad label"))?);
            s.push(cells[3].trim().parse().map_err(|_| err(i + 2, 4, "bad score"))?);
        }
        PredictionSet::new(t, p, l, s)
    }
}

fn class_counts(labels: &[u8]) -> (usize, usize) {
    let pos = labels.iter().filter(|&&l| l == 1).count();
    (pos, labels.len() - pos)
}

/// Mann–Whitney AUC: the fraction of (positive, negative) pairs ranked
/// correctly, ties counting one half. Computed from mid-ranks.
pub fn roc_auc(labels: &[u8], scores: &[f64]) -> Result<f64> {
    let (pos, neg) = class_counts(labels);
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric("ROC-AUC"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // sum of mid-ranks (1-based) of the positives, kept doubled to stay integral
    let mut twice_rank_sum: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let twice_mid = (i + 1 + j + 1) as u64;
        let pos_in_block = order[i..=j].iter().filter(|&&k| labels[k] == 1).count() as u64;
        twice_rank_sum += twice_mid * pos_in_block;
        i = j + 1;
    }
    let (p, n) = (pos as u64, neg as u64);
    // U = R - P(P+1)/2, doubled
    let twice_u = twice_rank_sum - p * (p + 1);
    Ok(twice_u as f64 / 2.0 / (p * n) as f64)
}

/// Average precision: Σ (ΔRecall × Precision) over descending distinct
/// score thresholds, tied scores entering as one block.
pub fn pr_auc(labels: &[u8], scores: &[f64]) -> Result<f64> {
    let (pos, _) = class_counts(labels);
    if pos == 0 {
        return Err(Error::UndefinedMetric("PR-AUC"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        for &k in &order[i..=j] {
            if labels[k] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
        }
        let recall = tp as f64 / pos as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
        i = j + 1;
    }
    Ok(ap)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

/// Predicted positive iff `score ≥ threshold`.
pub fn confusion(labels: &[u8], scores: &[f64], threshold: f64) -> ConfusionCounts {
    let mut c = ConfusionCounts::default();
    for (&l, &s) in labels.iter().zip(scores) {
        match (l == 1, s >= threshold) {
            (true, true) => c.tp += 1,
            (false, true) => c.fp += 1,
            (false, false) => c.tn += 1,
            (true, false) => c.fn_ += 1,
        }
    }
    c
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn sensitivity(&self) -> Result<f64> {
        match self.tp + self.fn_ {
            0 => Err(Error::UndefinedMetric("sensitivity")),
            d => Ok(self.tp as f64 / d as f64),
        }
    }

    pub fn specificity(&self) -> Result<f64> {
        match self.tn + self.fp {
            0 => Err(Error::UndefinedMetric("specificity")),
            d => Ok(self.tn as f64 / d as f64),
        }
    }

    pub fn balanced_accuracy(&self) -> Result<f64> {
        Ok((self.sensitivity()? + self.specificity()?) / 2.0)
    }

    /// Matthews correlation; 0 when any marginal is empty.
    pub fn mcc(&self) -> f64 {
        let (tp, fp, tn, fn_) = (self.tp as f64, self.fp as f64, self.tn as f64, self.fn_ as f64);
        let den = (tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_);
        if den == 0.0 {
            0.0
        } else {
            (tp * tn - fp * fn_) / den.sqrt()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalarMetrics {
    pub balanced_accuracy: f64,
    pub mcc: f64,
    pub sensitivity: f64,
    pub specificity: f64,
}

pub fn scalar_metrics(c: &ConfusionCounts) -> Result<ScalarMetrics> {
    Ok(ScalarMetrics {
        balanced_accuracy: c.balanced_accuracy()?,
        mcc: c.mcc(),
        sensitivity: c.sensitivity()?,
        specificity: c.specificity()?,
    })
}

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// The reported metrics.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Metric {
    RocAuc,
    PrAuc,
    BalancedAccuracy,
    Mcc,
    Sensitivity,
    Specificity,
}

impl Metric {
    pub const ALL: [Metric; 6] = [
        Metric::RocAuc,
        Metric::PrAuc,
        Metric::BalancedAccuracy,
        Metric::Mcc,
        Metric::Sensitivity,
        Metric::Specificity,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::RocAuc => "ROC-AUC",
            Metric::PrAuc => "PR-AUC",
            Metric::BalancedAccuracy => "Bal. Acc.",
            Metric::Mcc => "MCC",
            Metric::Sensitivity => "Sens.",
            Metric::Specificity => "Spec.",
        }
    }

    pub fn compute(self, labels: &[u8], scores: &[f64]) -> Result<f64> {
        let c = || confusion(labels, scores, DEFAULT_THRESHOLD);
        match self {
            Metric::RocAuc => roc_auc(labels, scores),
            Metric::PrAuc => pr_auc(labels, scores),
            Metric::BalancedAccuracy => c().balanced_accuracy(),
            Metric::Mcc => Ok(c().mcc()),
            Metric::Sensitivity => c().sensitivity(),
            Metric::Specificity => c().specificity(),
        }
    }
}

/// Test-set report with one bootstrap CI per metric.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n: usize,
    pub n_pos: usize,
    pub n_neg: usize,
    pub threshold: f64,
    pub ci_method: String,
    pub bootstrap_unit: BootstrapUnit,
    pub confusion: ConfusionCounts,
    #[serde(rename = "ROC-AUC")]
    pub roc_auc: MetricWithCI,
    #[serde(rename = "PR-AUC")]
    pub pr_auc: MetricWithCI,
    #[serde(rename = "Bal. Acc.")]
    pub balanced_accuracy: MetricWithCI,
    #[serde(rename = "MCC")]
    pub mcc: MetricWithCI,
    #[serde(rename = "Sens.")]
    pub sensitivity: MetricWithCI,
    #[serde(rename = "Spec.")]
    pub specificity: MetricWithCI,
}

impl MetricsReport {
    pub fn get(&self, m: Metric) -> &MetricWithCI {
        match m {
            Metric::RocAuc => &self.roc_auc,
            Metric::PrAuc => &self.pr_auc,
            Metric::BalancedAccuracy => &self.balanced_accuracy,
            Metric::Mcc => &self.mcc,
            Metric::Sensitivity => &self.sensitivity,
            Metric::Specificity => &self.specificity,
        }
    }
}

/// Every metric with its bootstrap CI. Fails when the full set is single-class.
pub fn evaluate(p: &PredictionSet, opts: &BootstrapOptions) -> Result<MetricsReport> {
    let (n_pos, n_neg) = class_counts(&p.label);
    let groups = opts.groups(&p.patient_id);
    let ci = |m: Metric| {
        bootstrap_ci(p.len(), groups.as_deref(), opts, |idx| {
            let labels: Vec<u8> = idx.iter().map(|&i| p.label[i]).collect();
            let scores: Vec<f64> = idx.iter().map(|&i| p.score[i]).collect();
            m.compute(&labels, &scores)
        })
    };
    Ok(MetricsReport {
        n: p.len(),
        n_pos,
        n_neg,
        threshold: DEFAULT_THRESHOLD,
        ci_method: "percentile".into(),
        bootstrap_unit: opts.unit,
        confusion: confusion(&p.label, &p.score, DEFAULT_THRESHOLD),
        roc_auc: ci(Metric::RocAuc)?,
        pr_auc: ci(Metric::PrAuc)?,
        balanced_accuracy: ci(Metric::BalancedAccuracy)?,
        mcc: ci(Metric::Mcc)?,
        sensitivity: ci(Metric::Sensitivity)?,
        specificity: ci(Metric::Specificity)?,
    })
}

#[cfg(test)]
mod tests;
