//! Synthetic gait cohorts with plantable single-sided anomalies.
//!
//! Every subject walks at a jittered cadence near `gait_freq_hz`. Each
//! sensor channel is a three-harmonic waveform plus white noise; the feet
//! carry the largest amplitude, the lower back less and the head least,
//! and the left foot runs half a cycle out of phase with the right.
//! Patients additionally receive an anomaly. Foot anomalies land on the
//! right foot with probability `laterality_fraction_right`, otherwise on
//! the left.

use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{write_trial, Manifest, SensorTrial, TrialEntry, CHANNELS, SAMPLE_RATE_HZ, SENSORS};
use crate::error::{Error, Result};
use crate::exec::substream;
use crate::ndgrad::Tensor;

const HE: usize = 0;
const LF: usize = 2;
const RF: usize = 3;

const SENSOR_AMP: [f64; 4] = [0.3, 0.6, 1.0, 1.0];
const CHANNEL_WEIGHT: [f64; 9] = [1.0, 0.8, 1.2, 0.7, 1.0, 0.6, 0.9, 0.7, 1.1];
const HARMONIC_WEIGHT: [f64; 3] = [1.0, 0.5, 0.25];
const ANOMALY_STREAM: u64 = 1 << 40;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnomalyKind {
    /// Periodic component of the affected foot shrinks.
    AmplitudeDrop,
    /// Irregular 3–8 Hz component added to the affected foot.
    VariabilityBoost,
    /// 4–6 Hz tremor added to the head sensor.
    AxialTremor,
}

impl AnomalyKind {
    /// Sensors touched by this anomaly when the drawn foot is `side`.
    pub fn affected_sensors(self, side: usize) -> Vec<usize> {
        match self {
            AnomalyKind::AmplitudeDrop | AnomalyKind::VariabilityBoost => vec![side],
            AnomalyKind::AxialTremor => vec![HE],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub task: String,
    pub n_controls: usize,
    pub n_patients: usize,
    pub trials_per_patient: usize,
    /// Samples per trial.
    #[serde(rename = "T")]
    pub t: usize,
    pub laterality_fraction_right: f64,
    pub anomaly: AnomalyKind,
    /// Anomaly magnitude relative to the affected sensor's amplitude.
    pub anomaly_strength: f64,
    pub gait_freq_hz: f64,
    /// Relative per-subject cadence jitter (uniform ±).
    pub freq_jitter: f64,
    pub noise_std: f64,
    pub patient_cohort: String,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            task: "synthetic".into(),
            n_controls: 30,
            n_patients: 30,
            trials_per_patient: 4,
            t: 512,
            laterality_fraction_right: 1.0,
            anomaly: AnomalyKind::VariabilityBoost,
            anomaly_strength: 1.0,
            gait_freq_hz: 1.0,
            freq_jitter: 0.1,
            noise_std: 0.1,
            patient_cohort: "CVA".into(),
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.n_controls == 0 || self.n_patients == 0 {
            return bad("n_controls and n_patients must be at least 1");
        }
        if self.trials_per_patient == 0 {
            return bad("trials_per_patient must be at least 1");
        }
        if self.t < 8 {
            return bad("T must be at least 8");
        }
        if !(0.0..=1.0).contains(&self.laterality_fraction_right) {
            return bad("laterality_fraction_right must lie in [0, 1]");
        }
        if !(self.noise_std >= 0.0) || !(self.anomaly_strength >= 0.0) {
            return bad("noise_std and anomaly_strength must be non-negative");
        }
        if !(self.gait_freq_hz > 0.0) || !(0.0..1.0).contains(&self.freq_jitter) {
            return bad("gait_freq_hz must be positive and freq_jitter in [0, 1)");
        }
        Ok(())
    }
}

/// Generated trials plus the ground truth of where anomalies were planted.
#[derive(Clone, Debug)]
pub struct SynthCohort {
    pub trials: Vec<SensorTrial>,
    /// Foot drawn for each patient (index into [`SENSORS`]).
    pub sides: BTreeMap<String, usize>,
}

impl SynthCohort {
    /// Manifest whose entries point at `trials/<trial_id>.csv`.
    pub fn manifest(&self, task: &str) -> Manifest {
        let entries = self
            .trials
            .iter()
            .map(|t| TrialEntry {
                trial_id: t.trial_id.clone(),
                patient_id: t.patient_id.clone(),
                label: t.label,
                cohort: t.cohort.clone(),
                path: format!("trials/{}.csv", t.trial_id),
            })
            .collect();
        Manifest::new(task, entries)
    }
}

struct Subject {
    id: String,
    label: u8,
    cohort: String,
    index: u64,
}

/// Build the cohort in memory. Controls come first, then patients.
pub fn synthesize_trials(cfg: &SynthConfig) -> Result<SynthCohort> {
    cfg.validate()?;
    let mut subjects = Vec::new();
    for i in 0..cfg.n_controls {
        subjects.push(Subject {
            id: format!("HS{:03}", i + 1),
            label: 0,
            cohort: "HS".into(),
            index: i as u64,
        });
    }
    for i in 0..cfg.n_patients {
        subjects.push(Subject {
            id: format!("{}{:03}", cfg.patient_cohort, i + 1),
            label: 1,
            cohort: cfg.patient_cohort.clone(),
            index: (cfg.n_controls + i) as u64,
        });
    }

    let mut trials = Vec::with_capacity(subjects.len() * cfg.trials_per_patient);
    let mut sides = BTreeMap::new();
    for subject in &subjects {
        let mut base = substream(cfg.seed, subject.index);
        let mut anomaly_rng = substream(cfg.seed, ANOMALY_STREAM + subject.index);
        let profile = SubjectProfile::draw(cfg, &mut base);
        let anomaly = (subject.label == 1).then(|| {
            let side = if anomaly_rng.random::<f64>() < cfg.laterality_fraction_right {
                RF
            } else {
                LF
            };
            let tremor_hz = anomaly_rng.random_range(4.0..6.0);
            sides.insert(subject.id.clone(), side);
            (side, tremor_hz)
        });
        for k in 0..cfg.trials_per_patient {
            let signal = profile.trial(cfg, &mut base, anomaly, &mut anomaly_rng);
            trials.push(SensorTrial {
                trial_id: format!("{}_t{}", subject.id, k),
                patient_id: subject.id.clone(),
                label: subject.label,
                cohort: subject.cohort.clone(),
                signal: Tensor::new(&[SENSORS.len(), CHANNELS.len(), cfg.t], signal)?,
                sample_rate: SAMPLE_RATE_HZ,
            });
        }
    }
    Ok(SynthCohort { trials, sides })
}

struct SubjectProfile {
    freq: f64,
    amp: [[f64; 9]; 4],
    phase: [[[f64; 3]; 9]; 4],
}

impl SubjectProfile {
    fn draw(cfg: &SynthConfig, rng: &mut impl Rng) -> Self {
        let unit = Normal::<f64>::new(0.0, 1.0).expect("unit normal");
        let freq = cfg.gait_freq_hz * (1.0 + rng.random_range(-1.0..=1.0) * cfg.freq_jitter);
        let mut amp = [[0.0; 9]; 4];
        let mut phase = [[[0.0; 3]; 9]; 4];
        for s in 0..4 {
            for c in 0..9 {
                amp[s][c] = SENSOR_AMP[s] * CHANNEL_WEIGHT[c] * (1.0 + 0.1 * unit.sample(rng)).max(0.5);
                for h in 0..3 {
                    phase[s][c][h] = rng.random_range(0.0..TAU);
                }
            }
        }
        // bilateral symmetry: the left foot mirrors the right half a cycle later
        for c in 0..9 {
            amp[LF][c] = amp[RF][c];
            for h in 0..3 {
                phase[LF][c][h] = phase[RF][c][h] + std::f64::consts::PI * (h + 1) as f64;
            }
        }
        SubjectProfile { freq, amp, phase }
    }

    fn trial(
        &self,
        cfg: &SynthConfig,
        rng: &mut impl Rng,
        anomaly: Option<(usize, f64)>,
        anomaly_rng: &mut impl Rng,
    ) -> Vec<f64> {
        let unit = Normal::<f64>::new(0.0, 1.0).expect("unit normal");
        let t_len = cfg.t;
        let freq = self.freq * (1.0 + 0.02 * unit.sample(rng));
        let offset = rng.random_range(0.0..TAU);
        let dt = 1.0 / SAMPLE_RATE_HZ;

        let mut out = vec![0.0; SENSORS.len() * CHANNELS.len() * t_len];
        for s in 0..4 {
            for c in 0..9 {
                let row = &mut out[(s * 9 + c) * t_len..][..t_len];
                for (i, v) in row.iter_mut().enumerate() {
                    let t = i as f64 * dt;
                    *v = self.amp[s][c]
                        * (0..3)
                            .map(|h| {
                                let n = (h + 1) as f64;
                                HARMONIC_WEIGHT[h]
                                    * (TAU * n * freq * t + n * offset + self.phase[s][c][h]).sin()
                            })
                            .sum::<f64>();
                }
            }
        }

        if let Some((side, tremor_hz)) = anomaly {
            let strength = cfg.anomaly_strength;
            match cfg.anomaly {
                AnomalyKind::AmplitudeDrop => {
                    let factor = (1.0 - 0.7 * strength).max(0.05);
                    out[side * 9 * t_len..(side + 1) * 9 * t_len]
                        .iter_mut()
                        .for_each(|v| *v *= factor);
                }
                AnomalyKind::VariabilityBoost => {
                    for c in 0..9 {
                        let burst = resonant_noise(t_len, 5.0, anomaly_rng);
                        let scale = strength * self.amp[side][c];
                        out[(side * 9 + c) * t_len..][..t_len]
                            .iter_mut()
                            .zip(&burst)
                            .for_each(|(v, b)| *v += scale * b);
                    }
                }
                AnomalyKind::AxialTremor => {
                    let phase = anomaly_rng.random_range(0.0..TAU);
                    for c in 0..9 {
                        let scale = 0.8 * strength * self.amp[HE][c];
                        let row = &mut out[(HE * 9 + c) * t_len..][..t_len];
                        for (i, v) in row.iter_mut().enumerate() {
                            *v += scale * (TAU * tremor_hz * i as f64 * dt + phase + c as f64).sin();
                        }
                    }
                }
            }
        }

        if cfg.noise_std > 0.0 {
            let noise = Normal::new(0.0, cfg.noise_std).expect("valid noise std");
            out.iter_mut().for_each(|v| *v += noise.sample(rng));
        } else {
            // keep the base stream aligned with the noisy configuration
            for _ in 0..out.len() {
                let _: f64 = unit.sample(rng);
            }
        }
        out
    }
}

/// Unit-variance AR(2) resonator noise centred on `centre_hz`.
fn resonant_noise(n: usize, centre_hz: f64, rng: &mut impl Rng) -> Vec<f64> {
    let unit = Normal::<f64>::new(0.0, 1.0).expect("unit normal");
    let r: f64 = 0.9;
    let w = TAU * centre_hz / SAMPLE_RATE_HZ;
    let (a1, a2) = (2.0 * r * w.cos(), -r * r);
    let warmup = 64;
    let mut y = Vec::with_capacity(n + warmup);
    let (mut y1, mut y2) = (0.0, 0.0);
    for _ in 0..n + warmup {
        let v = a1 * y1 + a2 * y2 + unit.sample(rng);
        y.push(v);
        y2 = y1;
        y1 = v;
    }
    let y = y.split_off(warmup);
    let mean = y.iter().sum::<f64>() / n as f64;
    let sd = (y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64).sqrt();
    y.into_iter().map(|v| (v - mean) / sd.max(1e-12)).collect()
}

/// Write the cohort as trial CSVs under `out_dir/trials/` plus
/// `out_dir/manifest.json`, and return the manifest.
pub fn generate_synthetic(cfg: &SynthConfig, out_dir: &Path) -> Result<Manifest> {
    let cohort = synthesize_trials(cfg)?;
    let trial_dir = out_dir.join("trials");
    fs::create_dir_all(&trial_dir).map_err(|e| Error::io(&trial_dir, e))?;
    let manifest = cohort.manifest(&cfg.task);
    for (trial, entry) in cohort.trials.iter().zip(&manifest.trials) {
        write_trial(trial, &out_dir.join(&entry.path))?;
    }
    manifest.save(&out_dir.join("manifest.json"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            n_controls: 3,
            n_patients: 3,
            trials_per_patient: 2,
            t: 64,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn counts_and_labels() {
        let cfg = SynthConfig {
            n_controls: 1,
            n_patients: 1,
            trials_per_patient: 1,
            ..small()
        };
        let c = synthesize_trials(&cfg).unwrap();
        assert_eq!(c.trials.len(), 2);
        assert_eq!(c.trials[0].label, 0);
        assert_eq!(c.trials[1].label, 1);
        assert_eq!(c.trials[1].signal.shape(), &[4, 9, 64]);
    }

    #[test]
    fn invalid_configs_rejected() {
        for cfg in [
            SynthConfig { n_patients: 0, ..small() },
            SynthConfig { n_controls: 0, ..small() },
            SynthConfig { t: 7, ..small() },
            SynthConfig { laterality_fraction_right: 1.5, ..small() },
            SynthConfig { noise_std: -1.0, ..small() },
        ] {
            assert!(matches!(synthesize_trials(&cfg), Err(Error::Config(_))), "{cfg:?}");
        }
    }

    #[test]
    fn laterality_extremes() {
        let right = synthesize_trials(&SynthConfig { n_patients: 20, ..small() }).unwrap();
        assert!(right.sides.values().all(|&s| s == RF));
        let left = synthesize_trials(&SynthConfig {
            n_patients: 20,
            laterality_fraction_right: 0.0,
            ..small()
        })
        .unwrap();
        assert!(left.sides.values().all(|&s| s == LF));
    }

    #[test]
    fn controls_do_not_depend_on_patient_settings() {
        let a = synthesize_trials(&small()).unwrap();
        let b = synthesize_trials(&SynthConfig {
            anomaly: AnomalyKind::AxialTremor,
            laterality_fraction_right: 0.0,
            ..small()
        })
        .unwrap();
        let controls = |c: &SynthCohort| {
            c.trials.iter().filter(|t| t.label == 0).cloned().collect::<Vec<_>>()
        };
        assert_eq!(controls(&a), controls(&b));
    }

    #[test]
    fn resonant_noise_is_standardised() {
        let mut rng = substream(3, 0);
        let y = resonant_noise(4096, 5.0, &mut rng);
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / y.len() as f64;
        assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-9);
    }
}
