use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{load_trial, SensorTrial, CHANNELS, SENSORS};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialEntry {
    pub trial_id: String,
    pub patient_id: String,
    pub label: u8,
    pub cohort: String,
    /// Trial file, relative to the manifest's directory unless absolute.
    pub path: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub task: String,
    pub sensors: Vec<String>,
    pub channels: Vec<String>,
    pub trials: Vec<TrialEntry>,
}

impl Manifest {
    pub fn new(task: impl Into<String>, trials: Vec<TrialEntry>) -> Self {
        Manifest {
            task: task.into(),
            sensors: SENSORS.iter().map(|s| s.to_string()).collect(),
            channels: CHANNELS.iter().map(|s| s.to_string()).collect(),
            trials,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sensors != SENSORS || self.channels != CHANNELS {
            return Err(Error::Config(format!(
                "unsupported layout: sensors {:?}, channels {:?}",
                self.sensors, self.channels
            )));
        }
        let mut seen = HashSet::new();
        for t in &self.trials {
            if !seen.insert(t.trial_id.as_str()) {
                return Err(Error::Config(format!("duplicate trial_id {}", t.trial_id)));
            }
            if t.label > 1 {
                return Err(Error::Config(format!("trial {}: label {} is not 0/1", t.trial_id, t.label)));
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: Manifest = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self).map_err(|e| Error::json(path, e))?;
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn resolve(&self, entry: &TrialEntry, base: &Path) -> PathBuf {
        let p = Path::new(&entry.path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base.join(p)
        }
    }

    /// Sorted unique patient ids.
    pub fn patients(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.trials.iter().map(|t| t.patient_id.clone()).collect();
        ids.sort();
        ids.dedup();
        ids
    }
}

/// Load a manifest and every trial it references. Metadata comes from the
/// manifest; the files supply the signals.
pub fn load_cohort(manifest_path: &Path) -> Result<(Manifest, Vec<SensorTrial>)> {
    let manifest = Manifest::load(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let trials = manifest
        .trials
        .iter()
        .map(|e| {
            let mut trial = load_trial(&manifest.resolve(e, base))?;
            trial.trial_id = e.trial_id.clone();
            trial.patient_id = e.patient_id.clone();
            trial.label = e.label;
            trial.cohort = e.cohort.clone();
            Ok(trial)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((manifest, trials))
}
