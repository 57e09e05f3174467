//! Adam training of the weighted BCE objective with validation early stopping.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{SensorTrial, SplitManifest};
use crate::error::{Error, Result};
use crate::exec::{substream, Executor};
use crate::metrics::{confusion, DEFAULT_THRESHOLD};
use crate::model::MultiStreamModel;
use crate::ndgrad::{sigmoid, Tensor};

const SHUFFLE_STREAM: u64 = 1 << 48;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub patience: usize,
    /// Derived from the training labels when absent.
    pub pos_weight: Option<f64>,
    pub seed: u64,
    pub shuffle: bool,
    #[serde(skip)]
    pub executor: Executor,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            epochs: 50,
            batch_size: 32,
            patience: 5,
            pos_weight: None,
            seed: 0,
            shuffle: true,
            executor: Executor::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0) || self.epochs == 0 || self.patience == 0 || self.batch_size == 0 {
            return Err(Error::Config(format!(
                "need lr ≥ 0, epochs ≥ 1, patience ≥ 1, batch_size ≥ 1 (got {}, {}, {}, {})",
                self.lr, self.epochs, self.patience, self.batch_size
            )));
        }
        if let Some(w) = self.pos_weight {
            if !(w > 0.0) {
                return Err(Error::Config(format!("pos_weight must be positive, got {w}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    /// Zero-based index of the epoch with the lowest validation loss.
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
    pub pos_weight: f64,
    /// Validation loss uses the same pos_weight as training.
    pub val_loss_weighted: bool,
    /// Balanced accuracy of the returned model on the training split (eval mode).
    pub train_balanced_accuracy: Option<f64>,
}

/// `#negatives / #positives`.
pub fn compute_pos_weight(labels: &[u8]) -> Result<f64> {
    let positives = labels.iter().filter(|&&l| l == 1).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::DegenerateTask { positives, negatives });
    }
    Ok(negatives as f64 / positives as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(shapes: impl IntoIterator<Item = usize>) -> Self {
        let sizes: Vec<usize> = shapes.into_iter().collect();
        AdamState {
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn for_model(model: &MultiStreamModel) -> Self {
        AdamState::new(model.named_params().iter().map(|(_, t)| t.numel()))
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(params: &mut [&mut Tensor], grads: &[Vec<f64>], state: &mut AdamState, lr: f64) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::dim("adam_step", params.len(), format!("{} grads, {} moments", grads.len(), state.m.len())));
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (i, p) in params.iter_mut().enumerate() {
        let (g, m, v) = (&grads[i], &mut state.m[i], &mut state.v[i]);
        if g.len() != p.numel() || m.len() != p.numel() {
            return Err(Error::dim("adam_step", p.numel(), g.len()));
        }
        for (j, theta) in p.data_mut().iter_mut().enumerate() {
            m[j] = b1 * m[j] + (1.0 - b1) * g[j];
            v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            *theta -= lr * m_hat / (v_hat.sqrt() + state.eps);
        }
    }
    Ok(())
}

/// Patience-based stopping on a minimised quantity.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    epoch: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Progress {
    Improved,
    Waiting,
    Stop,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            epoch: 0,
        }
    }

    /// Record the next epoch's value.
    pub fn observe(&mut self, value: f64) -> Progress {
        let epoch = self.epoch;
        self.epoch += 1;
        if value < self.best {
            self.best = value;
            self.best_epoch = epoch;
            Progress::Improved
        } else if epoch - self.best_epoch >= self.patience {
            Progress::Stop
        } else {
            Progress::Waiting
        }
    }

    pub fn best(&self) -> (usize, f64) {
        (self.best_epoch, self.best)
    }
}

/// Mean weighted BCE of `trials` in eval mode.
pub fn mean_loss(model: &MultiStreamModel, trials: &[&SensorTrial], pos_weight: f64, executor: Executor) -> Result<f64> {
    if trials.is_empty() {
        return Err(Error::Empty("loss over an empty split"));
    }
    let losses = executor.try_map(trials.len(), |i| model.loss(&trials[i].signal, trials[i].label, pos_weight))?;
    Ok(losses.iter().sum::<f64>() / trials.len() as f64)
}

/// Sigmoid scores of `trials` in eval mode.
pub fn predict_scores(model: &MultiStreamModel, trials: &[&SensorTrial], executor: Executor) -> Result<Vec<f64>> {
    executor.try_map(trials.len(), |i| {
        let mut rng = substream(0, 0);
        Ok(sigmoid(model.forward(trials[i], false, &mut rng)?.logit))
    })
}

/// Select the trials of the named split.
pub fn split_trials<'a>(splits: &SplitManifest, trials: &'a [SensorTrial], name: &str) -> Result<Vec<&'a SensorTrial>> {
    let patients = splits
        .split(name)
        .ok_or_else(|| Error::Config(format!("unknown split {name:?}")))?;
    let chosen: Vec<&SensorTrial> = trials
        .iter()
        .filter(|t| patients.binary_search(&t.patient_id).is_ok())
        .collect();
    if chosen.is_empty() {
        return Err(Error::Empty("split has no trials"));
    }
    Ok(chosen)
}

/// Train on the `train` split with early stopping on the `val` split.
pub fn train(
    model: MultiStreamModel,
    splits: &SplitManifest,
    trials: &[SensorTrial],
    cfg: &TrainConfig,
) -> Result<(MultiStreamModel, TrainHistory)> {
    let train_set = split_trials(splits, trials, "train")?;
    let val_set = split_trials(splits, trials, "val")?;
    train_on(model, &train_set, &val_set, cfg)
}

/// Training loop over explicit train/validation trial lists.
///
/// Each epoch shuffles the training trials, takes Adam steps on the mean
/// loss of consecutive batches (the last one may be short), then scores the
/// validation set without dropout. The parameters of the best validation
/// epoch are returned.
pub fn train_on(
    mut model: MultiStreamModel,
    train_set: &[&SensorTrial],
    val_set: &[&SensorTrial],
    cfg: &TrainConfig,
) -> Result<(MultiStreamModel, TrainHistory)> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Empty("training and validation splits must be non-empty"));
    }
    let labels: Vec<u8> = train_set.iter().map(|t| t.label).collect();
    let pos_weight = match cfg.pos_weight {
        Some(w) => w,
        None => compute_pos_weight(&labels)?,
    };

    let mut adam = AdamState::for_model(&model);
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best = model.clone();
    let mut history = TrainHistory {
        train_loss: Vec::new(),
        val_loss: Vec::new(),
        best_epoch: 0,
        best_val_loss: f64::INFINITY,
        stopped_early: false,
        pos_weight,
        val_loss_weighted: true,
        train_balanced_accuracy: None,
    };

    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 0..cfg.epochs {
        if cfg.shuffle {
            order.sort_unstable();
            order.shuffle(&mut substream(cfg.seed, SHUFFLE_STREAM + epoch as u64));
        }
        let mut epoch_loss = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let results = cfg.executor.try_map(batch.len(), |j| {
                let trial = train_set[batch[j]];
                let stream = ((epoch as u64) << 32) | (b * cfg.batch_size + j) as u64;
                let mut rng = substream(cfg.seed, stream);
                model.loss_and_grad(&trial.signal, trial.label, pos_weight, true, &mut rng)
            })?;
            let n = batch.len() as f64;
            let mut results = results.into_iter();
            let (first_loss, mut grads) = results.next().expect("non-empty batch");
            let mut batch_loss = first_loss;
            for (loss, g) in results {
                batch_loss += loss;
                for (acc, gi) in grads.iter_mut().zip(g) {
                    acc.iter_mut().zip(gi).for_each(|(a, v)| *a += v);
                }
            }
            grads.iter_mut().flatten().for_each(|v| *v /= n);
            if !batch_loss.is_finite() || grads.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { epoch, batch: b });
            }
            epoch_loss += batch_loss;
            adam_step(&mut model.params_mut(), &grads, &mut adam, cfg.lr)?;
        }
        history.train_loss.push(epoch_loss / train_set.len() as f64);

        let val = mean_loss(&model, val_set, pos_weight, cfg.executor)?;
        if !val.is_finite() {
            return Err(Error::NonFinite { epoch, batch: usize::MAX });
        }
        history.val_loss.push(val);
        match stopper.observe(val) {
            Progress::Improved => best = model.clone(),
            Progress::Waiting => {}
            Progress::Stop => {
                history.stopped_early = true;
                break;
            }
        }
    }
    let (best_epoch, best_val) = stopper.best();
    history.best_epoch = best_epoch;
    history.best_val_loss = best_val;

    let scores = predict_scores(&best, train_set, cfg.executor)?;
    history.train_balanced_accuracy = confusion(&labels, &scores, DEFAULT_THRESHOLD).balanced_accuracy().ok();
    Ok((best, history))
}
