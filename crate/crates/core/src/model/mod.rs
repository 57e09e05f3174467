//! Four-branch 1D-CNN with sensor-level attention fusion.
//!
//! Each sensor's `channels × T` block runs through its own convolutional
//! branch to a feature vector `vᵢ`. A linear scorer maps every `vᵢ` to a
//! raw score `eᵢ`, the scores are softmax-normalised into attention
//! weights `αᵢ`, and the context `c = Σ αᵢ vᵢ` feeds a two-layer
//! classifier that emits a single logit.

mod checkpoint;

use rand::distr::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndgrad::{Graph, Tensor, Var};

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};

/// How raw attention scores are produced from the branch features.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScorerKind {
    /// One `feature_dim → 1` map applied to every sensor's features.
    #[default]
    Shared,
    /// One `n_sensors·feature_dim → n_sensors` map over the concatenated features.
    Concatenated,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub n_sensors: usize,
    pub n_channels: usize,
    pub conv_filters: Vec<usize>,
    pub kernel_size: usize,
    pub padding: usize,
    pub pool_k: usize,
    pub feature_dim: usize,
    pub classifier_hidden: usize,
    pub dropout_p: f64,
    pub scorer: ScorerKind,
    /// Per-sensor, per-channel z-scoring of each trial before the first conv.
    pub normalize_input: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            n_sensors: 4,
            n_channels: 9,
            conv_filters: vec![32, 64, 128],
            kernel_size: 15,
            padding: 7,
            pool_k: 2,
            feature_dim: 128,
            classifier_hidden: 64,
            dropout_p: 0.5,
            scorer: ScorerKind::Shared,
            normalize_input: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.n_sensors == 0 || self.n_channels == 0 {
            return bad("n_sensors and n_channels must be positive".into());
        }
        if self.conv_filters.is_empty() || self.conv_filters.contains(&0) {
            return bad(format!("conv_filters must be non-empty and positive: {:?}", self.conv_filters));
        }
        if self.conv_filters.last() != Some(&self.feature_dim) {
            return bad(format!(
                "feature_dim {} must equal the last conv filter count {:?}",
                self.feature_dim, self.conv_filters
            ));
        }
        if self.kernel_size == 0 || self.pool_k == 0 || self.classifier_hidden == 0 {
            return bad("kernel_size, pool_k and classifier_hidden must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return bad(format!("dropout_p {} outside [0, 1)", self.dropout_p));
        }
        Ok(())
    }

    /// Length after one conv → pool stage, or `None` if the stage would be empty.
    fn stage_len(&self, t: usize) -> Option<usize> {
        let conv = (t + 2 * self.padding + 1).checked_sub(self.kernel_size)?;
        let pooled = conv / self.pool_k;
        (conv > 0 && pooled > 0).then_some(pooled)
    }

    /// Shortest trial the branches accept.
    pub fn min_len(&self) -> usize {
        (1..)
            .find(|&t| {
                self.conv_filters
                    .iter()
                    .try_fold(t, |len, _| self.stage_len(len))
                    .is_some()
            })
            .expect("some length always works")
    }

    /// Closed-form parameter count.
    pub fn param_count(&self) -> usize {
        let mut branch = 0;
        let mut c_in = self.n_channels;
        for &c_out in &self.conv_filters {
            branch += c_out * c_in * self.kernel_size + c_out;
            c_in = c_out;
        }
        let scorer = match self.scorer {
            ScorerKind::Shared => self.feature_dim + 1,
            ScorerKind::Concatenated => self.n_sensors * (self.n_sensors * self.feature_dim + 1),
        };
        let classifier = self.classifier_hidden * (self.feature_dim + 1) + self.classifier_hidden + 1;
        self.n_sensors * branch + scorer + classifier
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub w: Tensor,
    pub b: Tensor,
}

impl Layer {
    fn init(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let dist = Uniform::new(-bound, bound).map_err(|e| Error::Config(e.to_string()))?;
        let n: usize = shape.iter().product();
        let w = Tensor::new(shape, (0..n).map(|_| dist.sample(rng)).collect())?;
        Ok(Layer {
            w,
            b: Tensor::zeros(&[shape[0]]),
        })
    }
}

/// One sensor's convolutional feature extractor.
#[derive(Clone, Debug, PartialEq)]
pub struct Branch {
    pub convs: Vec<Layer>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MultiStreamModel {
    cfg: ModelConfig,
    pub branches: Vec<Branch>,
    pub attn: Layer,
    pub classifier: [Layer; 2],
}

/// Per-trial attention output of a forward pass.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionRecord {
    pub trial_id: String,
    /// Raw scores `eᵢ`.
    pub e: Vec<f64>,
    /// Softmax weights `αᵢ`.
    pub alpha: Vec<f64>,
    pub logit: f64,
}

/// Graph handles produced by [`MultiStreamModel::build`].
pub struct ForwardVars {
    pub params: Vec<Var>,
    pub features: Vec<Var>,
    pub e: Var,
    pub alpha: Var,
    pub logit: Var,
}

impl MultiStreamModel {
    /// Uniform(±1/√fan_in) weights and zero biases, drawn in canonical
    /// parameter order from a generator seeded with `seed`.
    pub fn init(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = cfg.kernel_size;
        let mut branches = Vec::with_capacity(cfg.n_sensors);
        for _ in 0..cfg.n_sensors {
            let mut convs = Vec::with_capacity(cfg.conv_filters.len());
            let mut c_in = cfg.n_channels;
            for &c_out in &cfg.conv_filters {
                convs.push(Layer::init(&[c_out, c_in, k], c_in * k, &mut rng)?);
                c_in = c_out;
            }
            branches.push(Branch { convs });
        }
        let attn = match cfg.scorer {
            ScorerKind::Shared => Layer::init(&[1, cfg.feature_dim], cfg.feature_dim, &mut rng)?,
            ScorerKind::Concatenated => {
                let n = cfg.n_sensors * cfg.feature_dim;
                Layer::init(&[cfg.n_sensors, n], n, &mut rng)?
            }
        };
        let classifier = [
            Layer::init(&[cfg.classifier_hidden, cfg.feature_dim], cfg.feature_dim, &mut rng)?,
            Layer::init(&[1, cfg.classifier_hidden], cfg.classifier_hidden, &mut rng)?,
        ];
        Ok(MultiStreamModel {
            cfg,
            branches,
            attn,
            classifier,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    /// Parameters in canonical order with their checkpoint names.
    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (s, branch) in self.branches.iter().enumerate() {
            for (j, layer) in branch.convs.iter().enumerate() {
                out.push((format!("branch{s}.conv{j}.w"), &layer.w));
                out.push((format!("branch{s}.conv{j}.b"), &layer.b));
            }
        }
        out.push(("attn.w".into(), &self.attn.w));
        out.push(("attn.b".into(), &self.attn.b));
        for (j, layer) in self.classifier.iter().enumerate() {
            out.push((format!("clf.{j}.w"), &layer.w));
            out.push((format!("clf.{j}.b"), &layer.b));
        }
        out
    }

    /// Mutable parameters in the same order as [`MultiStreamModel::named_params`].
    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for branch in &mut self.branches {
            for layer in &mut branch.convs {
                out.push(&mut layer.w);
                out.push(&mut layer.b);
            }
        }
        out.push(&mut self.attn.w);
        out.push(&mut self.attn.b);
        for layer in &mut self.classifier {
            out.push(&mut layer.w);
            out.push(&mut layer.b);
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.numel()).sum()
    }

    /// Rebuild from a config and named tensors (any order).
    pub fn from_named(cfg: ModelConfig, mut tensors: Vec<(String, Tensor)>) -> Result<Self> {
        let mut model = MultiStreamModel::init(cfg, 0)?;
        let names: Vec<(String, Vec<usize>)> = model
            .named_params()
            .into_iter()
            .map(|(n, t)| (n, t.shape().to_vec()))
            .collect();
        if tensors.len() != names.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                names.len(),
                tensors.len()
            )));
        }
        for ((name, shape), slot) in names.into_iter().zip(model.params_mut()) {
            let pos = tensors
                .iter()
                .position(|(n, _)| *n == name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
            let (_, t) = tensors.swap_remove(pos);
            if t.shape() != shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "{name}: expected shape {:?}, found {:?}",
                    shape,
                    t.shape()
                )));
            }
            *slot = t;
        }
        Ok(model)
    }

    fn check_signal(&self, signal: &Tensor) -> Result<usize> {
        let s = signal.shape();
        if s.len() != 3 || s[0] != self.cfg.n_sensors || s[1] != self.cfg.n_channels {
            return Err(Error::dim(
                "forward",
                format!("[{} × {} × T]", self.cfg.n_sensors, self.cfg.n_channels),
                format!("{:?}", s),
            ));
        }
        let min = self.cfg.min_len();
        if s[2] < min {
            return Err(Error::InputTooShort {
                op: "forward",
                len: s[2],
                min,
            });
        }
        Ok(s[2])
    }

    fn sensor_input(&self, signal: &[f64], sensor: usize, t: usize) -> Tensor {
        let c = self.cfg.n_channels;
        let mut block = signal[sensor * c * t..(sensor + 1) * c * t].to_vec();
        if self.cfg.normalize_input {
            for row in block.chunks_exact_mut(t) {
                zscore(row);
            }
        }
        Tensor::new(&[c, t], block).expect("block shape")
    }

    /// Record the full network on `g`.
    ///
    /// `score_offset`, when given, is added to the raw scores before the
    /// softmax (a large negative entry removes that sensor from the fusion).
    pub fn build<R: Rng + ?Sized>(
        &self,
        g: &mut Graph,
        signal: &Tensor,
        training: bool,
        requires_grad: bool,
        rng: &mut R,
        score_offset: Option<&[f64]>,
    ) -> Result<ForwardVars> {
        let t = self.check_signal(signal)?;
        let params: Vec<Var> = self
            .named_params()
            .into_iter()
            .map(|(_, p)| g.leaf(p.clone().with_grad(requires_grad)))
            .collect();
        let per_branch = 2 * self.cfg.conv_filters.len();

        let mut features = Vec::with_capacity(self.cfg.n_sensors);
        for s in 0..self.cfg.n_sensors {
            let x = g.leaf(self.sensor_input(signal.data(), s, t));
            let p = &params[s * per_branch..(s + 1) * per_branch];
            features.push(self.branch_graph(g, x, p)?);
        }

        let head = &params[self.cfg.n_sensors * per_branch..];
        let (aw, ab) = (head[0], head[1]);
        let e = match self.cfg.scorer {
            ScorerKind::Shared => {
                let scores = features
                    .iter()
                    .map(|&v| g.linear(v, aw, ab))
                    .collect::<Result<Vec<_>>>()?;
                g.concat(&scores)?
            }
            ScorerKind::Concatenated => {
                let joined = g.concat(&features)?;
                g.linear(joined, aw, ab)?
            }
        };
        let e = match score_offset {
            Some(off) => g.add_const(e, off)?,
            None => e,
        };
        let alpha = g.softmax(e);
        let context = g.weighted_sum(alpha, &features)?;
        let hidden = g.linear(context, head[2], head[3])?;
        let hidden = g.relu(hidden);
        let hidden = g.dropout(hidden, self.cfg.dropout_p, training, rng);
        let logit = g.linear(hidden, head[4], head[5])?;
        Ok(ForwardVars {
            params,
            features,
            e,
            alpha,
            logit,
        })
    }

    fn branch_graph(&self, g: &mut Graph, x: Var, params: &[Var]) -> Result<Var> {
        let mut h = x;
        for wb in params.chunks_exact(2) {
            h = g.conv1d(h, wb[0], wb[1], self.cfg.padding)?;
            h = g.relu(h);
            h = g.maxpool1d(h, self.cfg.pool_k)?;
        }
        g.adaptive_avg_pool_to_1(h)
    }

    /// Feature vector `vᵢ` of one sensor's `[channels × T]` block (eval mode).
    pub fn branch_forward(&self, sensor: usize, x: &Tensor) -> Result<Vec<f64>> {
        let (c, min) = (self.cfg.n_channels, self.cfg.min_len());
        if sensor >= self.cfg.n_sensors {
            return Err(Error::dim("branch_forward", format!("sensor < {}", self.cfg.n_sensors), sensor));
        }
        if x.shape().len() != 2 || x.shape()[0] != c {
            return Err(Error::dim("branch_forward", format!("[{c} × T]"), format!("{:?}", x.shape())));
        }
        let t = x.shape()[1];
        if t < min {
            return Err(Error::InputTooShort {
                op: "branch_forward",
                len: t,
                min,
            });
        }
        let mut g = Graph::new();
        let mut block = x.clone().with_grad(false);
        if self.cfg.normalize_input {
            block.data_mut().chunks_exact_mut(t).for_each(zscore);
        }
        let xv = g.leaf(block);
        let params: Vec<Var> = self.branches[sensor]
            .convs
            .iter()
            .flat_map(|l| [l.w.clone(), l.b.clone()])
            .map(|p| g.leaf(p))
            .collect();
        let v = self.branch_graph(&mut g, xv, &params)?;
        Ok(g.value(v).data().to_vec())
    }

    /// Forward pass of one trial signal `[n_sensors × n_channels × T]`.
    /// Dropout is active only when `training` is set.
    pub fn forward_signal<R: Rng + ?Sized>(
        &self,
        trial_id: &str,
        signal: &Tensor,
        training: bool,
        rng: &mut R,
    ) -> Result<AttentionRecord> {
        self.forward_with_score_offset(trial_id, signal, training, rng, None)
    }

    pub fn forward_with_score_offset<R: Rng + ?Sized>(
        &self,
        trial_id: &str,
        signal: &Tensor,
        training: bool,
        rng: &mut R,
        score_offset: Option<&[f64]>,
    ) -> Result<AttentionRecord> {
        let mut g = Graph::new();
        let vars = self.build(&mut g, signal, training, false, rng, score_offset)?;
        Ok(AttentionRecord {
            trial_id: trial_id.to_string(),
            e: g.value(vars.e).data().to_vec(),
            alpha: g.value(vars.alpha).data().to_vec(),
            logit: g.value(vars.logit).item(),
        })
    }

    /// Forward pass over a [`SensorTrial`](crate::data::SensorTrial).
    pub fn forward<R: Rng + ?Sized>(
        &self,
        trial: &crate::data::SensorTrial,
        training: bool,
        rng: &mut R,
    ) -> Result<AttentionRecord> {
        self.forward_signal(&trial.trial_id, &trial.signal, training, rng)
    }

    /// Weighted BCE of one trial and its gradient for every parameter in
    /// canonical order.
    pub fn loss_and_grad<R: Rng + ?Sized>(
        &self,
        signal: &Tensor,
        label: u8,
        pos_weight: f64,
        training: bool,
        rng: &mut R,
    ) -> Result<(f64, Vec<Vec<f64>>)> {
        let mut g = Graph::new();
        let vars = self.build(&mut g, signal, training, true, rng, None)?;
        let loss = g.bce_with_logits(vars.logit, f64::from(label), pos_weight)?;
        let value = g.value(loss).item();
        g.backward(loss)?;
        let grads = vars
            .params
            .iter()
            .map(|&p| {
                g.take_grad(p)
                    .unwrap_or_else(|| vec![0.0; g.value(p).numel()])
            })
            .collect();
        Ok((value, grads))
    }

    /// Weighted BCE of one trial without gradients (eval mode).
    pub fn loss(&self, signal: &Tensor, label: u8, pos_weight: f64) -> Result<f64> {
        let mut g = Graph::new();
        let mut rng = crate::exec::substream(0, 0);
        let vars = self.build(&mut g, signal, false, false, &mut rng, None)?;
        let loss = g.bce_with_logits(vars.logit, f64::from(label), pos_weight)?;
        Ok(g.value(loss).item())
    }
}

/// In-place z-score; a constant row is only centred.
fn zscore(row: &mut [f64]) {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let sd = var.sqrt();
    let scale = if sd > 1e-12 { 1.0 / sd } else { 1.0 };
    row.iter_mut().for_each(|v| *v = (*v - mean) * scale);
}

#[cfg(test)]
mod tests;
