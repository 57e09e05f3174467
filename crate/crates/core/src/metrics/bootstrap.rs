//! Seeded percentile bootstrap shared by the metrics and the attention audit.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{substream, Executor};

/// What a bootstrap draw resamples.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BootstrapUnit {
    /// Individual rows (trials).
    #[default]
    Trial,
    /// Whole patients, carrying all their rows (cluster bootstrap).
    Patient,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BootstrapOptions {
    pub n_bootstrap: usize,
    pub level: f64,
    pub seed: u64,
    pub unit: BootstrapUnit,
    /// Draws allowed per replicate before giving up on an undefined statistic.
    pub max_attempts: usize,
    pub executor: Executor,
}

impl Default for BootstrapOptions {
    fn default() -> Self {
        BootstrapOptions {
            n_bootstrap: 1000,
            level: 0.95,
            seed: 0,
            unit: BootstrapUnit::Trial,
            max_attempts: 100,
            executor: Executor::default(),
        }
    }
}

impl BootstrapOptions {
    pub fn with_seed(seed: u64) -> Self {
        BootstrapOptions {
            seed,
            ..Default::default()
        }
    }

    /// Row groups for patient-level resampling, `None` for trial-level.
    pub fn groups(&self, patient_ids: &[String]) -> Option<Vec<Vec<usize>>> {
        match self.unit {
            BootstrapUnit::Trial => None,
            BootstrapUnit::Patient => {
                let mut by_patient: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
                for (i, p) in patient_ids.iter().enumerate() {
                    by_patient.entry(p).or_default().push(i);
                }
                Some(by_patient.into_values().collect())
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricWithCI {
    pub point: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_bootstrap: usize,
    pub ci_level: f64,
}

/// Quantile `q ∈ [0, 1]` of sorted data with linear interpolation between
/// order statistics.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of empty data");
    let rank = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (rank - lo as f64)
}

/// Percentile bootstrap of `stat` over `n_rows` rows.
///
/// `stat` receives the resampled row indices. Replicate `i` draws from
/// substream `(seed, i)`; a draw on which `stat` is undefined is discarded
/// and redrawn, up to `max_attempts` times.
pub fn bootstrap_ci<F>(n_rows: usize, groups: Option<&[Vec<usize>]>, opts: &BootstrapOptions, stat: F) -> Result<MetricWithCI>
where
    F: Fn(&[usize]) -> Result<f64> + Sync + Send,
{
    if n_rows == 0 {
        return Err(Error::Empty("bootstrap input"));
    }
    if opts.n_bootstrap == 0 || !(0.0..1.0).contains(&opts.level) || opts.max_attempts == 0 {
        return Err(Error::Config(format!("bad bootstrap options {opts:?}")));
    }
    let all: Vec<usize> = (0..n_rows).collect();
    let point = stat(&all)?;

    let draw = |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<usize> {
        match groups {
            None => (0..n_rows).map(|_| rng.random_range(0..n_rows)).collect(),
            Some(groups) => {
                let mut idx = Vec::with_capacity(n_rows);
                for _ in 0..groups.len() {
                    idx.extend_from_slice(&groups[rng.random_range(0..groups.len())]);
                }
                idx
            }
        }
    };
    let replicate = |i: usize| -> Result<f64> {
        let mut rng = substream(opts.seed, i as u64);
        for _ in 0..opts.max_attempts {
            match stat(&draw(&mut rng)) {
                Ok(v) => return Ok(v),
                Err(Error::UndefinedMetric(_)) => continue,
                Err(e) => return Err(e),
            }
        }
        Err(Error::Infeasible(format!(
            "replicate {i}: statistic undefined on {} consecutive resamples",
            opts.max_attempts
        )))
    };
    let mut values = opts.executor.try_map(opts.n_bootstrap, replicate)?;
    values.sort_by(f64::total_cmp);
    let tail = (1.0 - opts.level) / 2.0;
    Ok(MetricWithCI {
        point,
        ci_low: percentile(&values, tail),
        ci_high: percentile(&values, 1.0 - tail),
        n_bootstrap: opts.n_bootstrap,
        ci_level: opts.level,
    })
}
