//! Trial data model, on-disk formats, synthetic cohorts and patient-level splits.

mod csv;
mod manifest;
mod split;
mod synth;

pub use csv::{load_trial, write_trial};
pub use manifest::{load_cohort, Manifest, TrialEntry};
pub use split::{split_patients, split_sizes, SplitManifest, SplitOptions};
pub use synth::{generate_synthetic, synthesize_trials, AnomalyKind, SynthCohort, SynthConfig};

use crate::ndgrad::Tensor;

/// Sensor order used everywhere: head, lower back, left foot, right foot.
pub const SENSORS: [&str; 4] = ["HE", "LB", "LF", "RF"];

/// Channel order within each sensor.
pub const CHANNELS: [&str; 9] = [
    "acc_x", "acc_y", "acc_z", "gyro_x", "gyro_y", "gyro_z", "facc_x", "facc_y", "facc_z",
];

pub const SAMPLE_RATE_HZ: f64 = 100.0;

/// Index of a sensor name in [`SENSORS`].
pub fn sensor_index(name: &str) -> Option<usize> {
    SENSORS.iter().position(|s| *s == name)
}

/// One walking trial: `signal` is `[sensor × channel × T]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SensorTrial {
    pub trial_id: String,
    pub patient_id: String,
    pub label: u8,
    pub cohort: String,
    pub signal: Tensor,
    pub sample_rate: f64,
}

impl SensorTrial {
    pub fn len(&self) -> usize {
        self.signal.shape()[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Samples of one sensor channel.
    pub fn channel(&self, sensor: usize, channel: usize) -> &[f64] {
        let t = self.len();
        let start = (sensor * CHANNELS.len() + channel) * t;
        &self.signal.data()[start..start + t]
    }
}
