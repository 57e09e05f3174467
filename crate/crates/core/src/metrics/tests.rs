use proptest::prelude::*;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::*;
use crate::exec::substream;

/// O(n²) pairwise Mann–Whitney count.
fn auc_oracle(labels: &[u8], scores: &[f64]) -> f64 {
    let mut concordant = 0.0;
    let (mut p, mut n) = (0usize, 0usize);
    for i in 0..labels.len() {
        if labels[i] == 1 {
            p += 1;
        } else {
            n += 1;
        }
    }
    for i in 0..labels.len() {
        for j in 0..labels.len() {
            if labels[i] == 1 && labels[j] == 0 {
                if scores[i] > scores[j] {
                    concordant += 1.0;
                } else if scores[i] == scores[j] {
                    concordant += 0.5;
                }
            }
        }
    }
    concordant / (p * n) as f64
}

/// Recompute precision/recall from scratch at every distinct threshold.
fn ap_oracle(labels: &[u8], scores: &[f64]) -> f64 {
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let pos = labels.iter().filter(|&&l| l == 1).count() as f64;
    let mut prev_r = 0.0;
    let mut ap = 0.0;
    for &t in &thresholds {
        let tp = labels.iter().zip(scores).filter(|(&l, &s)| l == 1 && s >= t).count() as f64;
        let pp = scores.iter().filter(|&&s| s >= t).count() as f64;
        let r = tp / pos;
        ap += (r - prev_r) * (tp / pp);
        prev_r = r;
    }
    ap
}

#[test]
fn roc_auc_examples() {
    let s = [0.9, 0.8, 0.3, 0.2];
    assert_eq!(roc_auc(&[1, 1, 0, 0], &s).unwrap(), 1.0);
    assert_eq!(roc_auc(&[1, 0, 0, 1], &s).unwrap(), 0.5);
    assert_eq!(auc_oracle(&[1, 0, 0, 1], &s), 0.5);
    assert_eq!(roc_auc(&[1, 0, 1, 0, 1], &[0.4; 5]).unwrap(), 0.5);
    assert!(matches!(roc_auc(&[1, 1], &[0.2, 0.3]), Err(Error::UndefinedMetric(_))));
}

#[test]
fn pr_auc_examples() {
    assert_eq!(pr_auc(&[1, 1, 0, 0], &[0.9, 0.8, 0.3, 0.2]).unwrap(), 1.0);
    assert_eq!(pr_auc(&[0, 1, 0], &[0.9, 0.8, 0.7]).unwrap(), 0.5);
    assert_eq!(ap_oracle(&[0, 1, 0], &[0.9, 0.8, 0.7]), 0.5);
    assert_eq!(pr_auc(&[1, 1, 1], &[0.1, 0.5, 0.9]).unwrap(), 1.0);
    assert!(matches!(pr_auc(&[0, 0], &[0.1, 0.2]), Err(Error::UndefinedMetric(_))));
}

#[test]
fn confusion_examples() {
    let c = confusion(&[1, 0], &[0.6, 0.4], 0.5);
    assert_eq!(c, ConfusionCounts { tp: 1, tn: 1, fp: 0, fn_: 0 });
    let c = confusion(&[0], &[0.5], 0.5);
    assert_eq!(c.fp, 1);
    let c = confusion(&[1, 0, 1, 0], &[0.6, 0.6, 0.4, 0.2], 0.5);
    assert_eq!(c, ConfusionCounts { tp: 1, fp: 1, fn_: 1, tn: 1 });
    assert_eq!(c.total(), 4);
}

#[test]
fn scalar_metric_examples() {
    let m = scalar_metrics(&ConfusionCounts { tp: 1, tn: 1, fp: 0, fn_: 0 }).unwrap();
    assert_eq!((m.sensitivity, m.specificity, m.balanced_accuracy, m.mcc), (1.0, 1.0, 1.0, 1.0));

    let c = ConfusionCounts { tp: 3, fp: 1, tn: 10, fn_: 1 };
    let m = scalar_metrics(&c).unwrap();
    assert!((m.mcc - 29.0 / 44.0).abs() < 1e-15);
    assert_eq!(m.sensitivity, 0.75);
    assert!((m.specificity - 10.0 / 11.0).abs() < 1e-15);
    assert!((m.balanced_accuracy - 0.8295454545454546).abs() < 1e-15);

    let c = ConfusionCounts { tp: 0, fp: 0, tn: 5, fn_: 3 };
    assert_eq!(c.mcc(), 0.0);
    assert_eq!(c.sensitivity().unwrap(), 0.0);
    let c = ConfusionCounts { tp: 0, fp: 0, tn: 5, fn_: 0 };
    assert!(matches!(c.sensitivity(), Err(Error::UndefinedMetric(_))));
    assert!(scalar_metrics(&c).is_err());
}

fn prediction_rows() -> impl Strategy<Value = (Vec<u8>, Vec<f64>)> {
    (2usize..200).prop_flat_map(|n| {
        (
            prop::collection::vec(0u8..2, n),
            // coarse grid so ties are common
            prop::collection::vec((0u32..40).prop_map(|k| k as f64 / 40.0), n),
        )
    })
}

proptest! {
    #[test]
    fn roc_auc_matches_pairwise_oracle((labels, scores) in prediction_rows()) {
        let has_both = labels.contains(&0) && labels.contains(&1);
        match roc_auc(&labels, &scores) {
            Ok(v) => { prop_assert!(has_both); prop_assert_eq!(v, auc_oracle(&labels, &scores)); }
            Err(_) => prop_assert!(!has_both),
        }
    }

    #[test]
    fn pr_auc_matches_threshold_sweep((labels, scores) in prediction_rows()) {
        if labels.contains(&1) {
            let v = pr_auc(&labels, &scores).unwrap();
            prop_assert!((v - ap_oracle(&labels, &scores)).abs() < 1e-12);
            prop_assert!((0.0..=1.0 + 1e-12).contains(&v));
        }
    }

    #[test]
    fn auc_complement_without_ties(n in 2usize..100, seed in 0u64..1000) {
        let mut rng = substream(seed, 0);
        let labels: Vec<u8> = (0..n).map(|i| if i % 2 == 0 { 1 } else { rng.random_range(0..2) }).collect();
        let scores: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        prop_assume!(labels.contains(&0));
        let flipped: Vec<f64> = scores.iter().map(|s| 1.0 - s).collect();
        let sum = roc_auc(&labels, &scores).unwrap() + roc_auc(&labels, &flipped).unwrap();
        prop_assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ranking_metrics_ignore_monotone_transforms((labels, scores) in prediction_rows()) {
        prop_assume!(labels.contains(&0) && labels.contains(&1));
        let warped: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() / 30.0).collect();
        prop_assert_eq!(roc_auc(&labels, &scores).unwrap(), roc_auc(&labels, &warped).unwrap());
        prop_assert!((pr_auc(&labels, &scores).unwrap() - pr_auc(&labels, &warped).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn confusion_metrics_in_range(tp in 0usize..50, fp in 0usize..50, tn in 0usize..50, fn_ in 0usize..50) {
        let c = ConfusionCounts { tp, fp, tn, fn_ };
        prop_assert!((-1.0..=1.0).contains(&c.mcc()));
        for v in [c.sensitivity(), c.specificity(), c.balanced_accuracy()].into_iter().flatten() {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }
}

#[test]
fn bootstrap_constant_metric_has_zero_width() {
    let ci = bootstrap_ci(25, None, &BootstrapOptions::with_seed(3), |_| Ok(0.7)).unwrap();
    assert_eq!((ci.point, ci.ci_low, ci.ci_high), (0.7, 0.7, 0.7));
    assert_eq!(ci.n_bootstrap, 1000);
}

#[test]
fn bootstrap_is_seeded() {
    let mut rng = substream(5, 5);
    let labels: Vec<u8> = (0..40).map(|i| (i % 3 == 0) as u8).collect();
    let scores: Vec<f64> = (0..40).map(|_| rng.random::<f64>()).collect();
    let p = PredictionSet::from_scores(labels, scores).unwrap();
    let a = evaluate(&p, &BootstrapOptions::with_seed(9)).unwrap();
    let b = evaluate(&p, &BootstrapOptions::with_seed(9)).unwrap();
    let c = evaluate(&p, &BootstrapOptions::with_seed(10)).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.roc_auc.ci_low, c.roc_auc.ci_low);
    for m in Metric::ALL {
        assert!(a.get(m).ci_low <= a.get(m).ci_high, "{}", m.name());
    }
    let seq = evaluate(
        &p,
        &BootstrapOptions {
            executor: crate::exec::Executor::Sequential,
            ..BootstrapOptions::with_seed(9)
        },
    )
    .unwrap();
    assert_eq!(a, seq);
}

#[test]
fn bootstrap_redraws_single_class_resamples() {
    // one positive in 30 rows: many resamples miss it entirely
    let labels: Vec<u8> = (0..30).map(|i| (i == 0) as u8).collect();
    let scores: Vec<f64> = (0..30).map(|i| 1.0 - i as f64 / 30.0).collect();
    let ci = bootstrap_ci(30, None, &BootstrapOptions::with_seed(1), |idx| {
        let l: Vec<u8> = idx.iter().map(|&i| labels[i]).collect();
        let s: Vec<f64> = idx.iter().map(|&i| scores[i]).collect();
        roc_auc(&l, &s)
    })
    .unwrap();
    assert_eq!(ci.point, 1.0);

    let never = BootstrapOptions { max_attempts: 3, ..BootstrapOptions::with_seed(1) };
    let r = bootstrap_ci(5, None, &never, |idx| {
        if idx.len() == 5 && idx != [0, 1, 2, 3, 4] { Err(Error::UndefinedMetric("x")) } else { Ok(1.0) }
    });
    assert!(matches!(r, Err(Error::Infeasible(_))));
}

#[test]
fn patient_bootstrap_resamples_whole_patients() {
    let ids: Vec<String> = ["a", "a", "b", "b", "b", "c"].iter().map(|s| s.to_string()).collect();
    let opts = BootstrapOptions { unit: BootstrapUnit::Patient, n_bootstrap: 200, ..Default::default() };
    let groups = opts.groups(&ids).unwrap();
    assert_eq!(groups, vec![vec![0, 1], vec![2, 3, 4], vec![5]]);
    // every resample is a union of whole patients
    bootstrap_ci(6, Some(&groups), &opts, |idx| {
        let count = |g: &[usize]| idx.iter().filter(|i| g.contains(i)).count();
        for g in &groups {
            assert_eq!(count(g) % g.len(), 0);
        }
        Ok(0.0)
    })
    .unwrap();
}

#[test]
fn percentile_interpolates() {
    let v = [1.0, 2.0, 3.0, 4.0, 5.0];
    assert_eq!(percentile(&v, 0.0), 1.0);
    assert_eq!(percentile(&v, 1.0), 5.0);
    assert_eq!(percentile(&v, 0.5), 3.0);
    assert_eq!(percentile(&v, 0.125), 1.5);
}

#[test]
fn bootstrap_auc_coverage() {
    // positives ~ N(1, 1), negatives ~ N(0, 1): AUC = Φ(1/√2)
    let true_auc = 0.7602499389065233;
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut covered = 0;
    for rep in 0..100u64 {
        let mut rng = substream(2024, rep);
        let labels: Vec<u8> = (0..200).map(|i| (i % 2) as u8).collect();
        let scores: Vec<f64> = labels.iter().map(|&l| normal.sample(&mut rng) + l as f64).collect();
        let ci = bootstrap_ci(200, None, &BootstrapOptions::with_seed(rep), |idx| {
            let l: Vec<u8> = idx.iter().map(|&i| labels[i]).collect();
            let s: Vec<f64> = idx.iter().map(|&i| scores[i]).collect();
            roc_auc(&l, &s)
        })
        .unwrap();
        if ci.ci_low <= true_auc && true_auc <= ci.ci_high {
            covered += 1;
        }
    }
    assert!(covered >= 90, "coverage {covered}/100");
}

#[test]
fn evaluate_fails_on_single_class() {
    let p = PredictionSet::from_scores(vec![0, 0, 0], vec![0.1, 0.2, 0.3]).unwrap();
    assert!(matches!(evaluate(&p, &BootstrapOptions::default()), Err(Error::UndefinedMetric(_))));
}

#[test]
fn prediction_csv_round_trip() {
    let p = PredictionSet::new(
        vec!["t1".into(), "t2".into()],
        vec!["p1".into(), "p1".into()],
        vec![1, 0],
        vec![0.123456789012345678, 1.0],
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pred.csv");
    p.save(&path).unwrap();
    assert_eq!(PredictionSet::load(&path).unwrap(), p);
    assert!(p.to_csv().starts_with("trial_id,patient_id,label,score\n"));
    assert!(PredictionSet::from_scores(vec![1], vec![1.5]).is_err());
}

#[test]
fn report_json_mirrors_table_columns() {
    let p = PredictionSet::from_scores(vec![1, 0, 1, 0], vec![0.9, 0.2, 0.7, 0.4]).unwrap();
    let r = evaluate(&p, &BootstrapOptions { n_bootstrap: 50, ..Default::default() }).unwrap();
    let v = serde_json::to_value(&r).unwrap();
    for key in ["ROC-AUC", "PR-AUC", "Bal. Acc.", "MCC", "Sens.", "Spec."] {
        for f in ["point", "ci_low", "ci_high"] {
            assert!(v[key][f].is_number(), "{key}.{f}");
        }
    }
}
