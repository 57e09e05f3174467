use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::exec::substream;

fn small_cfg() -> ModelConfig {
    ModelConfig {
        conv_filters: vec![3, 4, 5],
        feature_dim: 5,
        kernel_size: 5,
        padding: 2,
        classifier_hidden: 4,
        ..ModelConfig::default()
    }
}

fn random_signal(cfg: &ModelConfig, t: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let n = cfg.n_sensors * cfg.n_channels * t;
    Tensor::new(
        &[cfg.n_sensors, cfg.n_channels, t],
        (0..n).map(|_| rng.random_range(-2.0..2.0)).collect(),
    )
    .unwrap()
}

fn no_rng() -> ChaCha8Rng {
    substream(0, 0)
}

/// Copy of `model` where every branch carries branch 0's parameters.
fn tied(model: &MultiStreamModel) -> MultiStreamModel {
    let mut m = model.clone();
    let b0 = m.branches[0].clone();
    m.branches.iter_mut().for_each(|b| *b = b0.clone());
    m
}

#[test]
fn default_param_count_is_closed_form() {
    // per branch: 32·9·15+32 + 64·32·15+64 + 128·64·15+128 = 158_144
    // scorer 129, classifier 64·128+64 + 64+1 = 8_321
    let cfg = ModelConfig::default();
    assert_eq!(cfg.param_count(), 4 * 158_144 + 129 + 8_321);
    assert_eq!(cfg.param_count(), 641_026);
    let model = MultiStreamModel::init(cfg, 1).unwrap();
    assert_eq!(model.param_count(), 641_026);

    let cfg = ModelConfig {
        scorer: ScorerKind::Concatenated,
        ..ModelConfig::default()
    };
    let model = MultiStreamModel::init(cfg.clone(), 1).unwrap();
    assert_eq!(model.param_count(), cfg.param_count());
    assert_eq!(cfg.param_count(), 4 * 158_144 + 4 * 513 + 8_321);
}

#[test]
fn min_len_is_eight_for_default() {
    assert_eq!(ModelConfig::default().min_len(), 8);
    let cfg = ModelConfig {
        padding: 0,
        ..ModelConfig::default()
    };
    // valid conv shrinks by 14 per stage: 8 → pool needs conv ≥ 2
    assert!(cfg.min_len() > 8);
}

#[test]
fn config_validation() {
    let bad = ModelConfig {
        feature_dim: 64,
        ..ModelConfig::default()
    };
    assert!(bad.validate().is_err());
    let bad = ModelConfig {
        dropout_p: 1.0,
        ..ModelConfig::default()
    };
    assert!(bad.validate().is_err());
}

#[test]
fn init_is_deterministic_and_seed_sensitive() {
    let a = MultiStreamModel::init(small_cfg(), 5).unwrap();
    let b = MultiStreamModel::init(small_cfg(), 5).unwrap();
    let c = MultiStreamModel::init(small_cfg(), 6).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
    for (name, t) in a.named_params() {
        if name.ends_with(".b") {
            assert!(t.data().iter().all(|&v| v == 0.0), "{name}");
        }
    }
    let fan_in = 9.0 * 5.0;
    let bound = 1.0 / f64::sqrt(fan_in);
    assert!(a.branches[0].convs[0].w.data().iter().all(|v| v.abs() <= bound));
}

#[test]
fn branches_are_parameter_disjoint() {
    let m = MultiStreamModel::init(small_cfg(), 3).unwrap();
    for i in 0..4 {
        for j in i + 1..4 {
            assert_ne!(m.branches[i], m.branches[j]);
        }
    }
    let names: Vec<String> = m.named_params().into_iter().map(|(n, _)| n).collect();
    assert_eq!(names[0], "branch0.conv0.w");
    assert!(names.contains(&"branch3.conv2.b".to_string()));
    assert_eq!(&names[names.len() - 6..], ["attn.w", "attn.b", "clf.0.w", "clf.0.b", "clf.1.w", "clf.1.b"]);
}

#[test]
fn branch_forward_boundary_and_zero_input() {
    let cfg = ModelConfig::default();
    let m = MultiStreamModel::init(cfg.clone(), 0).unwrap();
    let mut rng = substream(1, 1);
    let x = Tensor::new(&[9, 8], (0..72).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let v = m.branch_forward(0, &x).unwrap();
    assert_eq!(v.len(), 128);
    assert!(v.iter().all(|x| x.is_finite()));

    let zeros = Tensor::zeros(&[9, 8]);
    assert!(m.branch_forward(2, &zeros).unwrap().iter().all(|&v| v == 0.0));

    let short = Tensor::zeros(&[9, 7]);
    assert!(matches!(m.branch_forward(0, &short), Err(Error::InputTooShort { .. })));
}

#[test]
fn branch_isolation() {
    let cfg = small_cfg();
    let m = MultiStreamModel::init(cfg.clone(), 2).unwrap();
    let mut rng = substream(2, 0);
    let a = random_signal(&cfg, 16, &mut rng);
    let mut b = a.clone();
    // change only sensor 3
    let t = 16;
    for v in &mut b.data_mut()[3 * 9 * t..] {
        *v += 1.0;
    }
    let slice = |s: &Tensor, i: usize| {
        Tensor::new(&[9, t], s.data()[i * 9 * t..(i + 1) * 9 * t].to_vec()).unwrap()
    };
    for i in 0..3 {
        assert_eq!(m.branch_forward(i, &slice(&a, i)).unwrap(), m.branch_forward(i, &slice(&b, i)).unwrap());
    }
}

#[test]
fn alpha_on_simplex_and_equals_softmax_of_e() {
    let cfg = small_cfg();
    let m = MultiStreamModel::init(cfg.clone(), 9).unwrap();
    let mut rng = substream(9, 0);
    for _ in 0..20 {
        let x = random_signal(&cfg, 24, &mut rng);
        let rec = m.forward_signal("t", &x, false, &mut no_rng()).unwrap();
        let sum: f64 = rec.alpha.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        let max = rec.e.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = rec.e.iter().map(|v| (v - max).exp()).sum();
        for (a, e) in rec.alpha.iter().zip(&rec.e) {
            assert!((a - (e - max).exp() / z).abs() < 1e-15);
        }
    }
}

#[test]
fn identical_sensors_with_tied_branches_give_uniform_attention() {
    let cfg = small_cfg();
    let m = tied(&MultiStreamModel::init(cfg.clone(), 4).unwrap());
    let mut rng = substream(4, 0);
    let one = random_signal(&ModelConfig { n_sensors: 1, ..cfg.clone() }, 32, &mut rng);
    let data = one.data().repeat(4);
    let x = Tensor::new(&[4, 9, 32], data).unwrap();
    let rec = m.forward_signal("t", &x, false, &mut no_rng()).unwrap();
    for a in &rec.alpha {
        assert!((a - 0.25).abs() < 1e-15, "{:?}", rec.alpha);
    }
}

#[test]
fn permutation_equivariance() {
    let cfg = small_cfg();
    let m = MultiStreamModel::init(cfg.clone(), 8).unwrap();
    let mut rng = substream(8, 0);
    let x = random_signal(&cfg, 32, &mut rng);
    let perm = [2usize, 0, 3, 1];
    let block = 9 * 32;
    let mut px = Vec::new();
    for &p in &perm {
        px.extend_from_slice(&x.data()[p * block..(p + 1) * block]);
    }
    let px = Tensor::new(&[4, 9, 32], px).unwrap();
    let mut pm = m.clone();
    pm.branches = perm.iter().map(|&p| m.branches[p].clone()).collect();

    let a = m.forward_signal("t", &x, false, &mut no_rng()).unwrap();
    let b = pm.forward_signal("t", &px, false, &mut no_rng()).unwrap();
    assert!((a.logit - b.logit).abs() < 1e-12);
    for (k, &p) in perm.iter().enumerate() {
        assert!((b.alpha[k] - a.alpha[p]).abs() < 1e-15);
    }
}

#[test]
fn masked_sensor_drops_out_of_fusion() {
    let cfg = small_cfg();
    let m = MultiStreamModel::init(cfg.clone(), 10).unwrap();
    let mut rng = substream(10, 0);
    let x = random_signal(&cfg, 32, &mut rng);
    let mask = [0.0, 0.0, -1e30, 0.0];
    let base = m.forward_with_score_offset("t", &x, false, &mut no_rng(), Some(&mask)).unwrap();
    assert_eq!(base.alpha[2], 0.0);
    assert!((base.alpha.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    // with sensor 2 masked, its input no longer affects the logit
    let mut y = x.clone();
    for v in &mut y.data_mut()[2 * 9 * 32..3 * 9 * 32] {
        *v = -*v * 3.0 + 1.0;
    }
    let other = m.forward_with_score_offset("t", &y, false, &mut no_rng(), Some(&mask)).unwrap();
    assert_eq!(base.logit, other.logit);
    // remaining weights are the renormalised softmax of the other scores
    let rest: Vec<f64> = [0, 1, 3].iter().map(|&i| base.e[i]).collect();
    let z: f64 = rest.iter().map(|e| e.exp()).sum();
    for (k, &i) in [0usize, 1, 3].iter().enumerate() {
        assert!((base.alpha[i] - rest[k].exp() / z).abs() < 1e-12);
    }
}

#[test]
fn layout_errors() {
    let cfg = small_cfg();
    let m = MultiStreamModel::init(cfg, 0).unwrap();
    let bad = Tensor::zeros(&[3, 9, 32]);
    assert!(matches!(
        m.forward_signal("t", &bad, false, &mut no_rng()),
        Err(Error::Dimension { .. })
    ));
    let short = Tensor::zeros(&[4, 9, 4]);
    assert!(matches!(
        m.forward_signal("t", &short, false, &mut no_rng()),
        Err(Error::InputTooShort { .. })
    ));
}

#[test]
fn eval_forward_is_deterministic_and_ignores_rng() {
    let cfg = small_cfg();
    let m = MultiStreamModel::init(cfg.clone(), 1).unwrap();
    let x = random_signal(&cfg, 16, &mut substream(1, 1));
    let a = m.forward_signal("t", &x, false, &mut substream(5, 0)).unwrap();
    let b = m.forward_signal("t", &x, false, &mut substream(6, 0)).unwrap();
    assert_eq!(a, b);
    let c = m.forward_signal("t", &x, true, &mut substream(5, 0)).unwrap();
    let d = m.forward_signal("t", &x, true, &mut substream(5, 0)).unwrap();
    assert_eq!(c, d);
}

#[test]
fn full_model_gradient_matches_finite_differences() {
    let cfg = small_cfg();
    let mut m = MultiStreamModel::init(cfg.clone(), 12).unwrap();
    // non-zero biases so every path is exercised
    let mut rng = substream(12, 1);
    for p in m.params_mut() {
        if p.shape().len() == 1 {
            p.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-0.1..0.1));
        }
    }
    let x = random_signal(&cfg, 16, &mut rng);
    let (_, grads) = m.loss_and_grad(&x, 1, 2.5, false, &mut no_rng()).unwrap();
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    let n_params = m.named_params().len();
    for pi in 0..n_params {
        let numel = m.named_params()[pi].1.numel();
        for j in 0..numel {
            let orig = m.named_params()[pi].1.data()[j];
            m.params_mut()[pi].data_mut()[j] = orig + h;
            let up = m.loss(&x, 1, 2.5).unwrap();
            m.params_mut()[pi].data_mut()[j] = orig - h;
            let down = m.loss(&x, 1, 2.5).unwrap();
            m.params_mut()[pi].data_mut()[j] = orig;
            let fd = (up - down) / (2.0 * h);
            let an = grads[pi][j];
            let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-4);
            worst = worst.max(rel);
        }
    }
    assert!(worst < 1e-5, "max relative error {worst}");
}

#[test]
fn checkpoint_round_trip_is_bitwise() {
    let m = MultiStreamModel::init(small_cfg(), 77).unwrap();
    let mut buf = Vec::new();
    write_checkpoint(&m, &mut buf).unwrap();
    let back = read_checkpoint(buf.as_slice()).unwrap();
    assert_eq!(back, m);
    let mut again = Vec::new();
    write_checkpoint(&back, &mut again).unwrap();
    assert_eq!(buf, again);

    buf[0] = b'X';
    assert!(matches!(read_checkpoint(buf.as_slice()), Err(Error::Checkpoint(_))));
}
