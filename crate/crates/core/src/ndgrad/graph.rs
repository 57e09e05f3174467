use rand::Rng;

use super::kernels::{self, ConvDims};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a tensor recorded in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Conv1d {
        x: Var,
        w: Var,
        b: Var,
        dims: ConvDims,
        cols: Vec<f64>,
    },
    Relu {
        x: Var,
    },
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    AvgPool {
        x: Var,
        t: usize,
    },
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    Softmax {
        x: Var,
    },
    Dropout {
        x: Var,
        // per-element multiplier: 0 or 1/(1-p)
        mask: Vec<f64>,
    },
    Identity {
        x: Var,
    },
    Bce {
        z: Var,
        label: f64,
        pos_weight: f64,
    },
    Sum {
        x: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Concat {
        parts: Vec<Var>,
    },
    WeightedSum {
        weights: Var,
        items: Vec<Var>,
    },
    AddConst {
        x: Var,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Execution record for reverse-mode differentiation.
///
/// Nodes are appended in execution order, so the node list is already a
/// topological order and backward is a single reverse sweep.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, t: Tensor) -> Var {
        let needs_grad = t.requires_grad();
        self.push(t, Op::Leaf, needs_grad)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Accumulated gradient of a leaf after [`Graph::backward`].
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Vec<f64>> {
        let t = &mut self.nodes[v.0].value;
        let g = t.grad().map(<[f64]>::to_vec);
        t.zero_grad();
        g
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    /// Stride-1 cross-correlation with zero padding.
    /// `x[C_in × T]`, `w[C_out × C_in × K]`, `b[C_out]`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, padding: usize) -> Result<Var> {
        let (xs, ws, bs) = (self.shape(x), self.shape(w), self.shape(b));
        if xs.len() != 2 || ws.len() != 3 || bs.len() != 1 {
            return Err(Error::dim(
                "conv1d",
                "x[C_in×T], w[C_out×C_in×K], b[C_out]",
                format!("x{:?}, w{:?}, b{:?}", xs, ws, bs),
            ));
        }
        if xs[0] != ws[1] {
            return Err(Error::dim("conv1d", format!("C_in = {}", ws[1]), xs[0]));
        }
        if bs[0] != ws[0] {
            return Err(Error::dim("conv1d", format!("bias length {}", ws[0]), bs[0]));
        }
        let dims = ConvDims {
            c_in: ws[1],
            c_out: ws[0],
            t_in: xs[1],
            kernel: ws[2],
            padding,
        };
        if dims.t_out() == 0 {
            return Err(Error::InputTooShort {
                op: "conv1d",
                len: dims.t_in,
                min: (dims.kernel).saturating_sub(2 * padding).max(1),
            });
        }
        let (out, cols) = kernels::conv1d_forward(self.data(x), self.data(w), self.data(b), dims);
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        let value = Tensor::new(&[dims.c_out, dims.t_out()], out)?;
        Ok(self.push(value, Op::Conv1d { x, w, b, dims, cols }, needs))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let src = &self.nodes[x.0].value;
        let data = src.data().iter().map(|&v| v.max(0.0)).collect();
        let value = Tensor::new(src.shape(), data).expect("same shape");
        let needs = self.needs(x);
        self.push(value, Op::Relu { x }, needs)
    }

    /// Non-overlapping windows of length `k`; a trailing remainder is dropped.
    pub fn maxpool1d(&mut self, x: Var, k: usize) -> Result<Var> {
        let xs = self.shape(x);
        if xs.len() != 2 || k == 0 {
            return Err(Error::dim("maxpool1d", "x[C×T] and k ≥ 1", format!("{:?}, k={}", xs, k)));
        }
        let (c, t) = (xs[0], xs[1]);
        if t / k == 0 {
            return Err(Error::InputTooShort {
                op: "maxpool1d",
                len: t,
                min: k,
            });
        }
        let (out, argmax) = kernels::maxpool1d(self.data(x), c, t, k);
        let value = Tensor::new(&[c, t / k], out)?;
        let needs = self.needs(x);
        Ok(self.push(value, Op::MaxPool { x, argmax }, needs))
    }

    /// Mean over the time axis: `x[C × T] -> [C]`.
    pub fn adaptive_avg_pool_to_1(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x);
        if xs.len() != 2 {
            return Err(Error::dim("adaptive_avg_pool", "x[C×T]", format!("{:?}", xs)));
        }
        let (c, t) = (xs[0], xs[1]);
        let out = self
            .data(x)
            .chunks_exact(t)
            .map(|row| row.iter().sum::<f64>() / t as f64)
            .collect();
        let value = Tensor::new(&[c], out)?;
        let needs = self.needs(x);
        Ok(self.push(value, Op::AvgPool { x, t }, needs))
    }

    /// `W x + b` for `x[N]`, `W[M × N]`, `b[M]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xs, ws, bs) = (self.shape(x), self.shape(w), self.shape(b));
        if xs.len() != 1 || ws.len() != 2 || bs.len() != 1 || ws[1] != xs[0] || ws[0] != bs[0] {
            return Err(Error::dim(
                "linear",
                "x[N], W[M×N], b[M]",
                format!("x{:?}, W{:?}, b{:?}", xs, ws, bs),
            ));
        }
        let out = kernels::matvec(self.data(w), self.data(x), self.data(b));
        let value = Tensor::vector(out);
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(value, Op::Linear { x, w, b }, needs))
    }

    /// Max-subtracted softmax over a vector.
    pub fn softmax(&mut self, x: Var) -> Var {
        let e = self.data(x);
        let max = e.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = e.iter().map(|v| (v - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        let out = exps.into_iter().map(|v| v / total).collect();
        let value = Tensor::new(self.shape(x), out).expect("same shape");
        let needs = self.needs(x);
        self.push(value, Op::Softmax { x }, needs)
    }

    /// Inverted dropout: survivors are scaled by `1/(1-p)`; eval mode is the identity.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, p: f64, training: bool, rng: &mut R) -> Var {
        assert!((0.0..1.0).contains(&p), "dropout probability {} outside [0, 1)", p);
        let src = &self.nodes[x.0].value;
        let needs = self.nodes[x.0].needs_grad;
        if !training || p == 0.0 {
            let value = src.clone().with_grad(false);
            return self.push(value, Op::Identity { x }, needs);
        }
        let scale = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..src.numel())
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { scale })
            .collect();
        let data = src.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let value = Tensor::new(src.shape(), data).expect("same shape");
        self.push(value, Op::Dropout { x, mask }, needs)
    }

    /// Weighted binary cross-entropy on a single logit, in the stable
    /// softplus form `pw·y·softplus(-z) + (1-y)·softplus(z)`.
    pub fn bce_with_logits(&mut self, z: Var, label: f64, pos_weight: f64) -> Result<Var> {
        if self.data(z).len() != 1 {
            return Err(Error::dim("bce_with_logits", "scalar logit", format!("{:?}", self.shape(z))));
        }
        if !(pos_weight > 0.0) {
            return Err(Error::Config(format!("pos_weight must be positive, got {}", pos_weight)));
        }
        let logit = self.data(z)[0];
        let loss = pos_weight * label * softplus(-logit) + (1.0 - label) * softplus(logit);
        let needs = self.needs(z);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Bce {
                z,
                label,
                pos_weight,
            },
            needs,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.data(x).iter().sum();
        let needs = self.needs(x);
        self.push(Tensor::scalar(total), Op::Sum { x }, needs)
    }

    /// Elementwise product of equally shaped tensors.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim("mul", format!("{:?}", self.shape(a)), format!("{:?}", self.shape(b))));
        }
        let data = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x * y).collect();
        let value = Tensor::new(self.shape(a), data)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Mul { a, b }, needs))
    }

    /// Concatenate 1-D tensors.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Empty("concat"));
        }
        let mut data = Vec::new();
        for &p in parts {
            if self.shape(p).len() != 1 {
                return Err(Error::dim("concat", "1-D parts", format!("{:?}", self.shape(p))));
            }
            data.extend_from_slice(self.data(p));
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(
            Tensor::vector(data),
            Op::Concat {
                parts: parts.to_vec(),
            },
            needs,
        ))
    }

    /// `Σᵢ weights[i] · items[i]` over equally shaped 1-D items.
    pub fn weighted_sum(&mut self, weights: Var, items: &[Var]) -> Result<Var> {
        if self.data(weights).len() != items.len() || items.is_empty() {
            return Err(Error::dim("weighted_sum", format!("{} weights", items.len()), self.data(weights).len()));
        }
        let n = self.data(items[0]).len();
        let mut out = vec![0.0; n];
        for (i, &item) in items.iter().enumerate() {
            if self.shape(item) != [n] {
                return Err(Error::dim("weighted_sum", format!("[{}]", n), format!("{:?}", self.shape(item))));
            }
            let wi = self.data(weights)[i];
            out.iter_mut().zip(self.data(item)).for_each(|(o, v)| *o += wi * v);
        }
        let needs = self.needs(weights) || items.iter().any(|&v| self.needs(v));
        Ok(self.push(
            Tensor::vector(out),
            Op::WeightedSum {
                weights,
                items: items.to_vec(),
            },
            needs,
        ))
    }

    /// `x + c` for a constant `c`; gradient passes through unchanged.
    pub fn add_const(&mut self, x: Var, c: &[f64]) -> Result<Var> {
        if self.data(x).len() != c.len() {
            return Err(Error::dim("add_const", self.data(x).len(), c.len()));
        }
        let data = self.data(x).iter().zip(c).map(|(a, b)| a + b).collect();
        let value = Tensor::new(self.shape(x), data)?;
        let needs = self.needs(x);
        Ok(self.push(value, Op::AddConst { x }, needs))
    }

    /// Reverse sweep from a scalar `loss`. Leaf gradients accumulate across
    /// calls; intermediate gradients live only for the duration of the sweep.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.nodes[loss.0].value.is_scalar() {
            return Err(Error::NotScalar(self.shape(loss).to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if !self.nodes[idx].needs_grad {
                continue;
            }
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {
                    self.nodes[idx].value.accumulate_grad(&g);
                }
                Op::Conv1d { x, w, b, dims, cols } => {
                    if self.needs(*w) || self.needs(*b) {
                        let (dw, db) = kernels::conv1d_backward_params(&g, cols, *dims);
                        add_grad(&mut grads, *w, dw);
                        add_grad(&mut grads, *b, db);
                    }
                    if self.needs(*x) {
                        let dx = kernels::conv1d_backward_input(&g, self.data(*w), *dims);
                        add_grad(&mut grads, *x, dx);
                    }
                }
                Op::Relu { x } => {
                    let dx = self
                        .data(*x)
                        .iter()
                        .zip(&g)
                        .map(|(&v, &gv)| if v > 0.0 { gv } else { 0.0 })
                        .collect();
                    add_grad(&mut grads, *x, dx);
                }
                Op::MaxPool { x, argmax } => {
                    let mut dx = vec![0.0; self.data(*x).len()];
                    for (&pos, gv) in argmax.iter().zip(&g) {
                        dx[pos] += gv;
                    }
                    add_grad(&mut grads, *x, dx);
                }
                Op::AvgPool { x, t } => {
                    let scale = 1.0 / *t as f64;
                    let dx = g
                        .iter()
                        .flat_map(|gv| std::iter::repeat_n(gv * scale, *t))
                        .collect();
                    add_grad(&mut grads, *x, dx);
                }
                Op::Linear { x, w, b } => {
                    let xd = self.data(*x);
                    let n = xd.len();
                    if self.needs(*x) {
                        let wd = self.data(*w);
                        let mut dx = vec![0.0; n];
                        for (row, gv) in wd.chunks_exact(n).zip(&g) {
                            dx.iter_mut().zip(row).for_each(|(d, wv)| *d += gv * wv);
                        }
                        add_grad(&mut grads, *x, dx);
                    }
                    if self.needs(*w) {
                        let dw = g.iter().flat_map(|gv| xd.iter().map(move |xv| gv * xv)).collect();
                        add_grad(&mut grads, *w, dw);
                    }
                    if self.needs(*b) {
                        add_grad(&mut grads, *b, g.clone());
                    }
                }
                Op::Softmax { x } => {
                    let alpha = node.value.data();
                    let dot: f64 = alpha.iter().zip(&g).map(|(a, gv)| a * gv).sum();
                    let dx = alpha.iter().zip(&g).map(|(a, gv)| a * (gv - dot)).collect();
                    add_grad(&mut grads, *x, dx);
                }
                Op::Dropout { x, mask } => {
                    let dx = g.iter().zip(mask).map(|(gv, m)| gv * m).collect();
                    add_grad(&mut grads, *x, dx);
                }
                Op::Identity { x } | Op::AddConst { x } => {
                    add_grad(&mut grads, *x, g);
                }
                Op::Bce {
                    z,
                    label,
                    pos_weight,
                } => {
                    let s = sigmoid(self.data(*z)[0]);
                    let dz = pos_weight * label * (s - 1.0) + (1.0 - label) * s;
                    add_grad(&mut grads, *z, vec![g[0] * dz]);
                }
                Op::Sum { x } => {
                    let n = self.data(*x).len();
                    add_grad(&mut grads, *x, vec![g[0]; n]);
                }
                Op::Mul { a, b } => {
                    if self.needs(*a) {
                        let da = g.iter().zip(self.data(*b)).map(|(gv, bv)| gv * bv).collect();
                        add_grad(&mut grads, *a, da);
                    }
                    if self.needs(*b) {
                        let db = g.iter().zip(self.data(*a)).map(|(gv, av)| gv * av).collect();
                        add_grad(&mut grads, *b, db);
                    }
                }
                Op::Concat { parts } => {
                    let mut offset = 0;
                    for &p in parts {
                        let n = self.data(p).len();
                        if self.needs(p) {
                            add_grad(&mut grads, p, g[offset..offset + n].to_vec());
                        }
                        offset += n;
                    }
                }
                Op::WeightedSum { weights, items } => {
                    if self.needs(*weights) {
                        let dw = items
                            .iter()
                            .map(|&v| self.data(v).iter().zip(&g).map(|(a, b)| a * b).sum())
                            .collect();
                        add_grad(&mut grads, *weights, dw);
                    }
                    let wd = self.data(*weights);
                    for (i, &v) in items.iter().enumerate() {
                        if self.needs(v) {
                            let dv = g.iter().map(|gv| wd[i] * gv).collect();
                            add_grad(&mut grads, v, dv);
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

fn add_grad(grads: &mut [Option<Vec<f64>>], v: Var, g: Vec<f64>) {
    match &mut grads[v.0] {
        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
        slot @ None => *slot = Some(g),
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + eᶻ)` without overflow.
pub fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}
