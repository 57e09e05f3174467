use std::collections::BTreeSet;

use proptest::prelude::*;
use sensoraudit::data::{split_patients, split_sizes, Manifest, SplitOptions, TrialEntry};

fn manifest(neg: usize, pos: usize, trials: usize) -> Manifest {
    let mut entries = Vec::new();
    for (prefix, n, label) in [("N", neg, 0u8), ("P", pos, 1u8)] {
        for i in 0..n {
            for k in 0..trials {
                let pid = format!("{prefix}{i:03}");
                entries.push(TrialEntry {
                    trial_id: format!("{pid}_t{k}"),
                    patient_id: pid,
                    label,
                    cohort: "x".into(),
                    path: String::new(),
                });
            }
        }
    }
    Manifest::new("leak", entries)
}

/// Largest-remainder apportionment written out longhand.
fn lr_oracle(n: usize, ratios: [f64; 3]) -> [usize; 3] {
    let quotas: Vec<f64> = ratios.iter().map(|r| r * n as f64).collect();
    let mut sizes: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut left = n - sizes.iter().sum::<usize>();
    let mut order: Vec<usize> = vec![0, 1, 2];
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    for &i in &order {
        if left == 0 {
            break;
        }
        sizes[i] += 1;
        left -= 1;
    }
    [sizes[0], sizes[1], sizes[2]]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn splits_are_disjoint_and_sized(
        neg in 1usize..40,
        pos in 1usize..40,
        trials in 1usize..4,
        seed in any::<u64>(),
        stratified in any::<bool>(),
    ) {
        let m = manifest(neg, pos, trials);
        let ratios = [0.70, 0.15, 0.15];
        let s = split_patients(&m, &SplitOptions { ratios, seed, stratified }).unwrap();
        let sets: Vec<BTreeSet<&String>> = [&s.train, &s.val, &s.test].iter().map(|v| v.iter().collect()).collect();
        prop_assert!(sets[0].is_disjoint(&sets[1]));
        prop_assert!(sets[0].is_disjoint(&sets[2]));
        prop_assert!(sets[1].is_disjoint(&sets[2]));
        let all: BTreeSet<String> = m.patients().into_iter().collect();
        let union: BTreeSet<String> = sets.iter().flatten().map(|s| s.to_string()).collect();
        prop_assert_eq!(union, all);
        let n = neg + pos;
        let sizes = [s.train.len(), s.val.len(), s.test.len()];
        prop_assert_eq!(sizes, lr_oracle(n, ratios));
        prop_assert_eq!(split_sizes(n, &ratios), sizes);

        // Every trial of a patient follows that patient.
        let mut seen = BTreeSet::new();
        for name in ["train", "val", "test"] {
            for id in s.trial_ids(&m, name).unwrap() {
                prop_assert!(seen.insert(id));
            }
        }
        prop_assert_eq!(seen.len(), m.trials.len());
    }
}

#[test]
fn same_seed_same_split() {
    let m = manifest(20, 9, 2);
    let o = SplitOptions { seed: 5, ..Default::default() };
    assert_eq!(split_patients(&m, &o).unwrap(), split_patients(&m, &o).unwrap());
}
