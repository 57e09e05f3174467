//! Leakage-free patient-level splitting.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Manifest;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitOptions {
    pub ratios: [f64; 3],
    pub seed: u64,
    /// Shuffle and allocate each class separately.
    pub stratified: bool,
}

impl Default for SplitOptions {
    fn default() -> Self {
        SplitOptions {
            ratios: [0.70, 0.15, 0.15],
            seed: 0,
            stratified: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub seed: u64,
    pub ratios: [f64; 3],
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl SplitManifest {
    pub fn split(&self, name: &str) -> Option<&[String]> {
        match name {
            "train" => Some(&self.train),
            "val" => Some(&self.val),
            "test" => Some(&self.test),
            _ => None,
        }
    }

    /// Trial ids of `manifest` whose patient is in the named split, in manifest order.
    pub fn trial_ids(&self, manifest: &Manifest, name: &str) -> Option<Vec<String>> {
        let patients = self.split(name)?;
        Some(
            manifest
                .trials
                .iter()
                .filter(|t| patients.binary_search(&t.patient_id).is_ok())
                .map(|t| t.trial_id.clone())
                .collect(),
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self).map_err(|e| Error::json(path, e))?;
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Largest-remainder apportionment of `n` items over `ratios`.
///
/// Leftover units go to the largest fractional parts; ties are broken by
/// `tiebreak` (larger first) and then by lower index.
fn apportion(n: usize, ratios: &[f64; 3], tiebreak: [i64; 3], capacity: Option<[usize; 3]>) -> [usize; 3] {
    let quotas: Vec<f64> = ratios.iter().map(|r| n as f64 * r).collect();
    let mut sizes = [0usize; 3];
    for k in 0..3 {
        sizes[k] = quotas[k].floor() as usize;
        if let Some(cap) = capacity {
            sizes[k] = sizes[k].min(cap[k]);
        }
    }
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let (fa, fb) = (quotas[a] - quotas[a].floor(), quotas[b] - quotas[b].floor());
        fb.total_cmp(&fa)
            .then(tiebreak[b].cmp(&tiebreak[a]))
            .then(a.cmp(&b))
    });
    let mut left = n - sizes.iter().sum::<usize>();
    // cycle in remainder order until every unit is placed
    while left > 0 {
        let before = left;
        for &k in &order {
            if left == 0 {
                break;
            }
            if capacity.is_none_or(|cap| sizes[k] < cap[k]) {
                sizes[k] += 1;
                left -= 1;
            }
        }
        assert!(left < before, "apportionment capacity exhausted");
    }
    sizes
}

/// Overall split sizes used for `n` patients.
pub fn split_sizes(n: usize, ratios: &[f64; 3]) -> [usize; 3] {
    apportion(n, ratios, [0; 3], None)
}

/// Partition patients into train/val/test.
///
/// Overall sizes follow largest-remainder rounding of the ratios. In
/// stratified mode the negatives are apportioned first (ties favour the
/// split with more room left), and the positives fill the remainder, so
/// the per-class counts stay within one of their quotas and the totals
/// still match. Patients are sorted by id before the seeded shuffle.
pub fn split_patients(manifest: &Manifest, opts: &SplitOptions) -> Result<SplitManifest> {
    let ratios = opts.ratios;
    if ratios.iter().any(|&r| !(r > 0.0)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split ratios must be positive and sum to 1: {ratios:?}")));
    }
    let mut labels: BTreeMap<&str, u8> = BTreeMap::new();
    for t in &manifest.trials {
        match labels.insert(&t.patient_id, t.label) {
            Some(prev) if prev != t.label => {
                return Err(Error::Config(format!("patient {} has trials with both labels", t.patient_id)));
            }
            _ => {}
        }
    }
    let by_class = |c: u8| -> Vec<String> {
        labels
            .iter()
            .filter(|(_, &l)| l == c)
            .map(|(p, _)| p.to_string())
            .collect()
    };
    let (mut neg, mut pos) = (by_class(0), by_class(1));
    if neg.is_empty() || pos.is_empty() {
        return Err(Error::DegenerateTask {
            positives: pos.len(),
            negatives: neg.len(),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let total = split_sizes(neg.len() + pos.len(), &ratios);
    let mut parts: [Vec<String>; 3] = Default::default();
    let mut warnings = Vec::new();

    if opts.stratified {
        neg.shuffle(&mut rng);
        pos.shuffle(&mut rng);
        let tiebreak = [total[0] as i64, total[1] as i64, total[2] as i64];
        let neg_sizes = apportion(neg.len(), &ratios, tiebreak, Some(total));
        let pos_sizes = [0, 1, 2].map(|k| total[k] - neg_sizes[k]);
        for (class, sizes, name) in [(neg, neg_sizes, "negative"), (pos, pos_sizes, "positive")] {
            let mut it = class.into_iter();
            for (k, part) in parts.iter_mut().enumerate() {
                part.extend(it.by_ref().take(sizes[k]));
                if sizes[k] == 0 {
                    warnings.push(format!(
                        "stratification: {} split has no {name} patients",
                        ["train", "val", "test"][k]
                    ));
                }
            }
        }
    } else {
        let mut all: Vec<String> = labels.keys().map(|p| p.to_string()).collect();
        all.shuffle(&mut rng);
        let mut it = all.into_iter();
        for (k, part) in parts.iter_mut().enumerate() {
            part.extend(it.by_ref().take(total[k]));
        }
        for (k, part) in parts.iter().enumerate() {
            for (c, name) in [(0u8, "negative"), (1, "positive")] {
                if !part.iter().any(|p| labels[p.as_str()] == c) {
                    warnings.push(format!("{} split has no {name} patients", ["train", "val", "test"][k]));
                }
            }
        }
    }
    for part in &mut parts {
        part.sort();
    }
    let [train, val, test] = parts;
    Ok(SplitManifest {
        seed: opts.seed,
        ratios,
        train,
        val,
        test,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::TrialEntry;

    pub(crate) fn manifest(n_neg: usize, n_pos: usize, trials_each: usize) -> Manifest {
        let mut trials = Vec::new();
        for (prefix, n, label) in [("N", n_neg, 0u8), ("P", n_pos, 1u8)] {
            for i in 0..n {
                for k in 0..trials_each {
                    trials.push(TrialEntry {
                        trial_id: format!("{prefix}{i:02}_t{k}"),
                        patient_id: format!("{prefix}{i:02}"),
                        label,
                        cohort: prefix.into(),
                        path: String::new(),
                    });
                }
            }
        }
        Manifest::new("test", trials)
    }

    fn count_pos(ids: &[String]) -> usize {
        ids.iter().filter(|p| p.starts_with('P')).count()
    }

    #[test]
    fn largest_remainder_sizes() {
        let r = [0.7, 0.15, 0.15];
        assert_eq!(split_sizes(20, &r), [14, 3, 3]);
        assert_eq!(split_sizes(60, &r), [42, 9, 9]);
        assert_eq!(split_sizes(10, &r), [7, 2, 1]);
        assert_eq!(split_sizes(3, &r), [2, 1, 0]);
        assert_eq!(split_sizes(1, &r), [1, 0, 0]);
    }

    #[test]
    fn twenty_patients_golden() {
        let m = manifest(10, 10, 2);
        let s = split_patients(&m, &SplitOptions { seed: 11, ..Default::default() }).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (14, 3, 3));
        assert_eq!(
            (count_pos(&s.train), count_pos(&s.val), count_pos(&s.test)),
            (7, 1, 2)
        );
        assert!(s.warnings.is_empty());
        // frozen from the first run with seed 11
        assert_eq!(s.val, vec!["N02", "N08", "P08"]);
        assert_eq!(s.test, vec!["N06", "P02", "P06"]);
    }

    #[test]
    fn trials_follow_their_patient() {
        let m = manifest(6, 5, 3);
        let s = split_patients(&m, &SplitOptions::default()).unwrap();
        let mut seen = 0;
        for name in ["train", "val", "test"] {
            let ids = s.trial_ids(&m, name).unwrap();
            for id in &ids {
                let patient = &id[..3];
                assert!(s.split(name).unwrap().iter().any(|p| p == patient));
            }
            seen += ids.len();
        }
        assert_eq!(seen, m.trials.len());
    }

    #[test]
    fn seeds_change_partition_not_profile() {
        let m = manifest(10, 10, 1);
        let a = split_patients(&m, &SplitOptions { seed: 1, ..Default::default() }).unwrap();
        let b = split_patients(&m, &SplitOptions { seed: 2, ..Default::default() }).unwrap();
        assert_ne!((a.train.clone(), a.val.clone()), (b.train.clone(), b.val.clone()));
        assert_eq!(
            (a.train.len(), a.val.len(), a.test.len()),
            (b.train.len(), b.val.len(), b.test.len())
        );
    }

    #[test]
    fn tiny_cohort_warns() {
        let m = manifest(1, 1, 1);
        let s = split_patients(&m, &SplitOptions::default()).unwrap();
        assert!(!s.warnings.is_empty());
        let s = split_patients(&m, &SplitOptions { stratified: false, ..Default::default() }).unwrap();
        assert!(!s.warnings.is_empty());
    }

    #[test]
    fn bad_inputs() {
        let m = manifest(3, 0, 1);
        assert!(matches!(
            split_patients(&m, &SplitOptions::default()),
            Err(Error::DegenerateTask { .. })
        ));
        let m = manifest(3, 3, 1);
        let bad = SplitOptions { ratios: [0.5, 0.5, 0.1], ..Default::default() };
        assert!(split_patients(&m, &bad).is_err());
        let bad = SplitOptions { ratios: [1.0, 0.0, 0.0], ..Default::default() };
        assert!(split_patients(&m, &bad).is_err());
    }
}
