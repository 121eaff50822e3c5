//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! Every op appends a node holding its output value and whatever it needs for
//! the backward rule. Nodes are only ever appended, so the node order is a
//! topological order and `backward` is a single reverse sweep.

use std::collections::HashMap;

use rand::Rng;

use super::fft::{causal_conv_spectral, causal_conv_spectral_backward, ConvDims, ConvSpectra};
use super::params::{ParamId, ParamStore};
use super::{gemm_nn, gemm_nt, gemm_tn, Tensor};
use crate::error::{Error, Result};

pub const LEAKY_SLOPE: f64 = 0.01;
pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Bcast {
    Same,
    LhsScalar,
    RhsScalar,
}

enum Op {
    Leaf,
    Add(Var, Var, Bcast),
    Sub(Var, Var, Bcast),
    Mul(Var, Var, Bcast),
    Scale(Var, f64),
    Sin(Var),
    Relu(Var),
    LeakyRelu(Var),
    Swish(Var),
    /// Mask already carries the inverted-dropout scale.
    Dropout(Var, Vec<f64>),
    Sum(Var),
    Mean(Var),
    MatMul(Var, Var),
    Linear { x: Var, w: Var, b: Option<Var> },
    Transpose(Var),
    Reshape(Var),
    WeightNorm { v: Var, g: Var, norms: Vec<f64> },
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    ChannelBias { x: Var, b: Var },
    CausalConv { x: Var, k: Var, dims: ConvDims, spectra: ConvSpectra },
    Pointwise { x: Var, w: Var, b: Option<Var> },
    LastStep(Var),
    ToRows(Var),
    Mse { pred: Var, target: Tensor },
    CrossEntropy { logits: Var, targets: Vec<usize>, probs: Vec<f64> },
    Blur { k: Var, taps: Vec<f64> },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Tensor>,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// Leaf bound to a stored parameter; repeated calls return the same var.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.leaf(store.value(id).clone(), true);
        self.params.insert(id, v);
        v
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf, if `backward` has reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    /// Adds the gradients of every bound parameter into the store.
    pub fn accumulate_param_grads(&self, store: &mut ParamStore) {
        for (&id, &v) in &self.params {
            if let Some(g) = &self.nodes[v.0].grad {
                store.accumulate_grad(id, g);
            }
        }
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let out = self.value(a).map(f);
        let rg = self.rg(&[a]);
        self.push(out, op, rg)
    }

    fn bcast(&self, op: &'static str, a: Var, b: Var) -> Result<Bcast> {
        let (sa, sb) = (self.value(a), self.value(b));
        if sa.shape() == sb.shape() {
            Ok(Bcast::Same)
        } else if sb.is_scalar() && sb.shape().len() <= 1 {
            Ok(Bcast::RhsScalar)
        } else if sa.is_scalar() && sa.shape().len() <= 1 {
            Ok(Bcast::LhsScalar)
        } else {
            Err(Error::Dimension {
                op,
                lhs: sa.shape().to_vec(),
                rhs: sb.shape().to_vec(),
            })
        }
    }

    fn binary(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<(Tensor, Bcast)> {
        let bc = self.bcast(name, a, b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let out = match bc {
            Bcast::Same => ta.zip_with(tb, name, f)?,
            Bcast::RhsScalar => {
                let s = tb.item();
                ta.map(|x| f(x, s))
            }
            Bcast::LhsScalar => {
                let s = ta.item();
                tb.map(|y| f(s, y))
            }
        };
        Ok((out, bc))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (out, bc) = self.binary("add", a, b, |x, y| x + y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Add(a, b, bc), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (out, bc) = self.binary("sub", a, b, |x, y| x - y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Sub(a, b, bc), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (out, bc) = self.binary("mul", a, b, |x, y| x * y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b, bc), rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, Op::Scale(a, c), |x| c * x)
    }

    pub fn sin(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sin(a), f64::sin)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Relu(a), |x| x.max(0.0))
    }

    pub fn leaky_relu(&mut self, a: Var) -> Var {
        self.unary(a, Op::LeakyRelu(a), |x| if x > 0.0 { x } else { LEAKY_SLOPE * x })
    }

    pub fn swish(&mut self, a: Var) -> Var {
        self.unary(a, Op::Swish(a), |x| x * sigmoid(x))
    }

    /// Inverted dropout: kept entries are scaled by `1/(1−p)` in training mode;
    /// identity otherwise.
    pub fn dropout<R: Rng + ?Sized>(&mut self, a: Var, p: f64, training: bool, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Config(format!("dropout rate {p} outside [0, 1)")));
        }
        if !training || p == 0.0 {
            return Ok(a);
        }
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..self.value(a).numel())
            .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
            .collect();
        let x = self.value(a);
        let out = Tensor::from_parts(
            x.shape().to_vec(),
            x.data().iter().zip(&mask).map(|(v, m)| v * m).collect(),
        );
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::Dropout(a, mask), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let s = x.sum() / x.numel() as f64;
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(s), Op::Mean(a), rg)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = super::matmul(self.value(a), self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    /// `x·wᵀ + b` for `x: [N, in]`, `w: [out, in]`, `b: [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let [n, din] = self.value(x).dims2("linear")?;
        let [dout, win] = self.value(w).dims2("linear")?;
        if din != win {
            return Err(Error::Dimension {
                op: "linear",
                lhs: self.shape(x).to_vec(),
                rhs: self.shape(w).to_vec(),
            });
        }
        let mut out = vec![0.0; n * dout];
        if let Some(b) = b {
            let bv = self.value(b);
            if bv.numel() != dout {
                return Err(Error::Dimension {
                    op: "linear bias",
                    lhs: vec![dout],
                    rhs: bv.shape().to_vec(),
                });
            }
            for row in out.chunks_mut(dout) {
                row.copy_from_slice(bv.data());
            }
        }
        gemm_nt(self.value(x).data(), self.value(w).data(), &mut out, n, din, dout);
        let mut deps = vec![x, w];
        deps.extend(b);
        let rg = self.rg(&deps);
        Ok(self.push(Tensor::from_parts(vec![n, dout], out), Op::Linear { x, w, b }, rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).transpose2()?;
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::Transpose(a), rg))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).reshape(shape)?;
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::Reshape(a), rg))
    }

    /// Row-wise weight normalization `w_i = g_i · v_i / ‖v_i‖`.
    pub fn weight_norm(&mut self, v: Var, g: Var) -> Result<Var> {
        let [rows, cols] = self.value(v).dims2("weight_norm")?;
        if self.value(g).numel() != rows {
            return Err(Error::Dimension {
                op: "weight_norm",
                lhs: self.shape(v).to_vec(),
                rhs: self.shape(g).to_vec(),
            });
        }
        let vd = self.value(v).data();
        let gd = self.value(g).data();
        let mut norms = Vec::with_capacity(rows);
        let mut out = vec![0.0; rows * cols];
        for i in 0..rows {
            let row = &vd[i * cols..(i + 1) * cols];
            let n = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n == 0.0 {
                return Err(Error::Singularity { row: i });
            }
            for (o, x) in out[i * cols..(i + 1) * cols].iter_mut().zip(row) {
                *o = gd[i] * x / n;
            }
            norms.push(n);
        }
        let rg = self.rg(&[v, g]);
        Ok(self.push(Tensor::from_parts(vec![rows, cols], out), Op::WeightNorm { v, g, norms }, rg))
    }

    /// Normalizes each `(batch, time)` position of `x: [B, C, T]` over channels.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let [b, c, t] = self.value(x).dims3("layer_norm")?;
        if self.value(gain).numel() != c || self.value(bias).numel() != c {
            return Err(Error::Dimension {
                op: "layer_norm",
                lhs: self.shape(x).to_vec(),
                rhs: self.shape(gain).to_vec(),
            });
        }
        let xd = self.value(x).data();
        let gd = self.value(gain).data();
        let bd = self.value(bias).data();
        let mut xhat = vec![0.0; b * c * t];
        let mut inv_std = vec![0.0; b * t];
        let mut out = vec![0.0; b * c * t];
        for bi in 0..b {
            let base = bi * c * t;
            for ti in 0..t {
                let mut mean = 0.0;
                for ci in 0..c {
                    mean += xd[base + ci * t + ti];
                }
                mean /= c as f64;
                let mut var = 0.0;
                for ci in 0..c {
                    let d = xd[base + ci * t + ti] - mean;
                    var += d * d;
                }
                var /= c as f64;
                let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
                inv_std[bi * t + ti] = inv;
                for ci in 0..c {
                    let idx = base + ci * t + ti;
                    let h = (xd[idx] - mean) * inv;
                    xhat[idx] = h;
                    out[idx] = gd[ci] * h + bd[ci];
                }
            }
        }
        let rg = self.rg(&[x, gain, bias]);
        Ok(self.push(
            Tensor::from_parts(vec![b, c, t], out),
            Op::LayerNorm { x, gain, bias, xhat, inv_std },
            rg,
        ))
    }

    /// Adds a per-channel bias `b: [C]` to `x: [B, C, T]`.
    pub fn channel_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let [_, c, t] = self.value(x).dims3("channel_bias")?;
        if self.value(b).numel() != c {
            return Err(Error::Dimension {
                op: "channel_bias",
                lhs: self.shape(x).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let bd = self.value(b).data().to_vec();
        let mut out = self.value(x).clone();
        for (i, row) in out.data_mut().chunks_mut(t).enumerate() {
            let bv = bd[i % c];
            row.iter_mut().for_each(|v| *v += bv);
        }
        let rg = self.rg(&[x, b]);
        Ok(self.push(out, Op::ChannelBias { x, b }, rg))
    }

    /// Causal convolution of `x: [B, C_in, T]` with `k: [C_out, C_in, K]`
    /// through the convolution theorem. Kernels longer than `T` are rejected;
    /// callers truncate.
    pub fn causal_conv(&mut self, x: Var, k: Var) -> Result<Var> {
        let [batch, c_in, t] = self.value(x).dims3("causal_conv")?;
        let [c_out, kc, klen] = self.value(k).dims3("causal_conv")?;
        if kc != c_in {
            return Err(Error::Dimension {
                op: "causal_conv",
                lhs: self.shape(x).to_vec(),
                rhs: self.shape(k).to_vec(),
            });
        }
        if klen > t || klen == 0 || t == 0 {
            return Err(Error::InvalidLength(format!("kernel length {klen} for sequence length {t}")));
        }
        let dims = ConvDims { batch, c_in, c_out, t, klen };
        let (y, spectra) = causal_conv_spectral(self.value(x).data(), self.value(k).data(), dims);
        let rg = self.rg(&[x, k]);
        Ok(self.push(
            Tensor::from_parts(vec![batch, c_out, t], y),
            Op::CausalConv { x, k, dims, spectra },
            rg,
        ))
    }

    /// Kernel-size-1 convolution `y[b] = w·x[b] + bias` with `w: [C_out, C_in]`.
    pub fn pointwise(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let [batch, c_in, t] = self.value(x).dims3("pointwise")?;
        let [c_out, wc] = self.value(w).dims2("pointwise")?;
        if wc != c_in {
            return Err(Error::Dimension {
                op: "pointwise",
                lhs: self.shape(x).to_vec(),
                rhs: self.shape(w).to_vec(),
            });
        }
        let mut out = vec![0.0; batch * c_out * t];
        if let Some(b) = b {
            let bd = self.value(b).data();
            for (i, row) in out.chunks_mut(t).enumerate() {
                row.fill(bd[i % c_out]);
            }
        }
        let xd = self.value(x).data();
        let wd = self.value(w).data();
        for bi in 0..batch {
            gemm_nn(
                wd,
                &xd[bi * c_in * t..(bi + 1) * c_in * t],
                &mut out[bi * c_out * t..(bi + 1) * c_out * t],
                c_out,
                c_in,
                t,
            );
        }
        let mut deps = vec![x, w];
        deps.extend(b);
        let rg = self.rg(&deps);
        Ok(self.push(Tensor::from_parts(vec![batch, c_out, t], out), Op::Pointwise { x, w, b }, rg))
    }

    /// Features of the final time step: `[B, C, T] → [B, C]`.
    pub fn last_step(&mut self, x: Var) -> Result<Var> {
        let [b, c, t] = self.value(x).dims3("last_step")?;
        if t == 0 {
            return Err(Error::Data("empty sequence".into()));
        }
        let out: Vec<f64> = self.value(x).data().chunks(t).map(|row| row[t - 1]).collect();
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::from_parts(vec![b, c], out), Op::LastStep(x), rg))
    }

    /// `[B, C, T] → [B·T, C]`, one row per (batch, step).
    pub fn to_rows(&mut self, x: Var) -> Result<Var> {
        let [b, c, t] = self.value(x).dims3("to_rows")?;
        let xd = self.value(x).data();
        let mut out = vec![0.0; b * c * t];
        for bi in 0..b {
            for ci in 0..c {
                for ti in 0..t {
                    out[(bi * t + ti) * c + ci] = xd[(bi * c + ci) * t + ti];
                }
            }
        }
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::from_parts(vec![b * t, c], out), Op::ToRows(x), rg))
    }

    /// Mean squared error against a constant target.
    pub fn mse(&mut self, pred: Var, target: &Tensor) -> Result<Var> {
        let p = self.value(pred);
        if p.numel() != target.numel() {
            return Err(Error::Dimension {
                op: "mse",
                lhs: p.shape().to_vec(),
                rhs: target.shape().to_vec(),
            });
        }
        let n = p.numel() as f64;
        let loss = p.data().iter().zip(target.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n;
        let rg = self.rg(&[pred]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Mse {
                pred,
                target: target.clone(),
            },
            rg,
        ))
    }

    /// Mean cross-entropy of `logits: [N, K]` against class indices.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let [n, k] = self.value(logits).dims2("cross_entropy")?;
        if targets.len() != n {
            return Err(Error::Dimension {
                op: "cross_entropy",
                lhs: vec![n, k],
                rhs: vec![targets.len()],
            });
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= k) {
            return Err(Error::Data(format!("class index {bad} out of range for {k} classes")));
        }
        let (probs, loss) = softmax_xent(self.value(logits).data(), targets, k);
        let rg = self.rg(&[logits]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            rg,
        ))
    }

    /// Centered filtering of every row along the last axis with odd-length
    /// `taps` (zero padding, output length unchanged).
    pub fn blur(&mut self, k: Var, taps: &[f64]) -> Result<Var> {
        if taps.len() % 2 == 0 {
            return Err(Error::InvalidLength(format!("blur filter of even length {}", taps.len())));
        }
        let kv = self.value(k);
        let len = *kv.shape().last().unwrap_or(&1);
        let r = taps.len() / 2;
        let mut out = vec![0.0; kv.numel()];
        for (src, dst) in kv.data().chunks(len).zip(out.chunks_mut(len)) {
            for (i, d) in dst.iter_mut().enumerate() {
                let mut acc = 0.0;
                for (j, &w) in taps.iter().enumerate() {
                    let idx = i as isize + j as isize - r as isize;
                    if idx >= 0 && (idx as usize) < len {
                        acc += w * src[idx as usize];
                    }
                }
                *d = acc;
            }
        }
        let out = Tensor::from_parts(kv.shape().to_vec(), out);
        let rg = self.rg(&[k]);
        Ok(self.push(out, Op::Blur { k, taps: taps.to_vec() }, rg))
    }

    /// Reverse sweep from a scalar `loss`. Leaf gradients accumulate across
    /// calls until [`Tape::zero_grad`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let lv = &self.nodes[loss.0];
        if !lv.value.is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.value.shape()
            )));
        }
        if !lv.requires_grad {
            return Err(Error::EmptyTape);
        }
        let mut grads: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::from_parts(lv.value.shape().to_vec(), vec![1.0]));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            if matches!(self.nodes[i].op, Op::Leaf) {
                let node = &mut self.nodes[i];
                match &mut node.grad {
                    Some(acc) => acc.data_mut().iter_mut().zip(g.data()).for_each(|(a, b)| *a += b),
                    None => node.grad = Some(g),
                }
                continue;
            }
            for (var, dv) in self.vjp(i, &g) {
                if !self.nodes[var.0].requires_grad {
                    continue;
                }
                match &mut grads[var.0] {
                    Some(acc) => acc.data_mut().iter_mut().zip(dv.data()).for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(dv),
                }
            }
        }
        Ok(())
    }

    fn vjp(&self, i: usize, g: &Tensor) -> Vec<(Var, Tensor)> {
        let node = &self.nodes[i];
        let gd = g.data();
        let like = |v: Var, data: Vec<f64>| Tensor::from_parts(self.shape(v).to_vec(), data);
        let rg = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => vec![],
            Op::Add(a, b, bc) => vec![(*a, reduce_bcast(g, *bc, true)), (*b, reduce_bcast(g, *bc, false))],
            Op::Sub(a, b, bc) => {
                let gb = reduce_bcast(g, *bc, false).scaled(-1.0);
                vec![(*a, reduce_bcast(g, *bc, true)), (*b, gb)]
            }
            Op::Mul(a, b, bc) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let mut out = Vec::new();
                if rg(*a) {
                    let ga = match bc {
                        Bcast::Same => g.zip_with(tb, "mul", |x, y| x * y).unwrap(),
                        Bcast::RhsScalar => g.scaled(tb.item()),
                        Bcast::LhsScalar => Tensor::from_parts(
                            ta.shape().to_vec(),
                            vec![gd.iter().zip(tb.data()).map(|(x, y)| x * y).sum()],
                        ),
                    };
                    out.push((*a, ga));
                }
                if rg(*b) {
                    let gb = match bc {
                        Bcast::Same => g.zip_with(ta, "mul", |x, y| x * y).unwrap(),
                        Bcast::LhsScalar => g.scaled(ta.item()),
                        Bcast::RhsScalar => Tensor::from_parts(
                            tb.shape().to_vec(),
                            vec![gd.iter().zip(ta.data()).map(|(x, y)| x * y).sum()],
                        ),
                    };
                    out.push((*b, gb));
                }
                out
            }
            Op::Scale(a, c) => vec![(*a, g.scaled(*c))],
            Op::Sin(a) => {
                let x = self.value(*a).data();
                vec![(*a, like(*a, gd.iter().zip(x).map(|(g, x)| g * x.cos()).collect()))]
            }
            Op::Relu(a) => {
                let x = self.value(*a).data();
                vec![(*a, like(*a, gd.iter().zip(x).map(|(g, &x)| if x > 0.0 { *g } else { 0.0 }).collect()))]
            }
            Op::LeakyRelu(a) => {
                let x = self.value(*a).data();
                vec![(
                    *a,
                    like(*a, gd.iter().zip(x).map(|(g, &x)| if x > 0.0 { *g } else { LEAKY_SLOPE * g }).collect()),
                )]
            }
            Op::Swish(a) => {
                let x = self.value(*a).data();
                let d = gd
                    .iter()
                    .zip(x)
                    .map(|(g, &x)| {
                        let s = sigmoid(x);
                        g * (s + x * s * (1.0 - s))
                    })
                    .collect();
                vec![(*a, like(*a, d))]
            }
            Op::Dropout(a, mask) => vec![(*a, like(*a, gd.iter().zip(mask).map(|(g, m)| g * m).collect()))],
            Op::Sum(a) => vec![(*a, Tensor::full(self.shape(*a), gd[0]))],
            Op::Mean(a) => {
                let n = self.value(*a).numel() as f64;
                vec![(*a, Tensor::full(self.shape(*a), gd[0] / n))]
            }
            Op::MatMul(a, b) => {
                let [m, k] = self.value(*a).dims2("matmul").unwrap();
                let [_, n] = self.value(*b).dims2("matmul").unwrap();
                let mut out = Vec::new();
                if rg(*a) {
                    let mut da = vec![0.0; m * k];
                    gemm_nt(gd, self.value(*b).data(), &mut da, m, n, k);
                    out.push((*a, like(*a, da)));
                }
                if rg(*b) {
                    let mut db = vec![0.0; k * n];
                    gemm_tn(self.value(*a).data(), gd, &mut db, m, k, n);
                    out.push((*b, like(*b, db)));
                }
                out
            }
            Op::Linear { x, w, b } => {
                let [n, din] = self.value(*x).dims2("linear").unwrap();
                let [dout, _] = self.value(*w).dims2("linear").unwrap();
                let mut out = Vec::new();
                if rg(*x) {
                    let mut dx = vec![0.0; n * din];
                    gemm_nn(gd, self.value(*w).data(), &mut dx, n, dout, din);
                    out.push((*x, like(*x, dx)));
                }
                if rg(*w) {
                    let mut dw = vec![0.0; dout * din];
                    gemm_tn(gd, self.value(*x).data(), &mut dw, n, dout, din);
                    out.push((*w, like(*w, dw)));
                }
                if let Some(b) = b {
                    let mut db = vec![0.0; dout];
                    for row in gd.chunks(dout) {
                        db.iter_mut().zip(row).for_each(|(d, g)| *d += g);
                    }
                    out.push((*b, like(*b, db)));
                }
                out
            }
            Op::Transpose(a) => vec![(*a, g.transpose2().unwrap())],
            Op::Reshape(a) => vec![(*a, like(*a, gd.to_vec()))],
            Op::WeightNorm { v, g: gain, norms } => {
                let [rows, cols] = self.value(*v).dims2("weight_norm").unwrap();
                let vd = self.value(*v).data();
                let gvals = self.value(*gain).data();
                let mut dv = vec![0.0; rows * cols];
                let mut dg = vec![0.0; rows];
                for i in 0..rows {
                    let n = norms[i];
                    let vrow = &vd[i * cols..(i + 1) * cols];
                    let grow = &gd[i * cols..(i + 1) * cols];
                    let dot: f64 = vrow.iter().zip(grow).map(|(a, b)| a * b).sum::<f64>() / n;
                    dg[i] = dot;
                    let s = gvals[i] / n;
                    for j in 0..cols {
                        dv[i * cols + j] = s * (grow[j] - dot * vrow[j] / n);
                    }
                }
                vec![(*v, like(*v, dv)), (*gain, like(*gain, dg))]
            }
            Op::LayerNorm { x, gain, bias, xhat, inv_std } => {
                let [b, c, t] = self.value(*x).dims3("layer_norm").unwrap();
                let gn = self.value(*gain).data();
                let mut dx = vec![0.0; b * c * t];
                let mut dgain = vec![0.0; c];
                let mut dbias = vec![0.0; c];
                for bi in 0..b {
                    let base = bi * c * t;
                    for ti in 0..t {
                        let mut s1 = 0.0;
                        let mut s2 = 0.0;
                        for ci in 0..c {
                            let idx = base + ci * t + ti;
                            let dh = gd[idx] * gn[ci];
                            s1 += dh;
                            s2 += dh * xhat[idx];
                            dgain[ci] += gd[idx] * xhat[idx];
                            dbias[ci] += gd[idx];
                        }
                        let inv = inv_std[bi * t + ti];
                        let cf = c as f64;
                        for ci in 0..c {
                            let idx = base + ci * t + ti;
                            let dh = gd[idx] * gn[ci];
                            dx[idx] = inv / cf * (cf * dh - s1 - xhat[idx] * s2);
                        }
                    }
                }
                vec![(*x, like(*x, dx)), (*gain, like(*gain, dgain)), (*bias, like(*bias, dbias))]
            }
            Op::ChannelBias { x, b } => {
                let [_, c, t] = self.value(*x).dims3("channel_bias").unwrap();
                let mut db = vec![0.0; c];
                for (i, row) in gd.chunks(t).enumerate() {
                    db[i % c] += row.iter().sum::<f64>();
                }
                vec![(*x, g.clone()), (*b, like(*b, db))]
            }
            Op::CausalConv { x, k, dims, spectra } => {
                let (dx, dk) = causal_conv_spectral_backward(gd, spectra, *dims, rg(*x), rg(*k));
                let mut out = Vec::new();
                if let Some(dx) = dx {
                    out.push((*x, like(*x, dx)));
                }
                if let Some(dk) = dk {
                    out.push((*k, like(*k, dk)));
                }
                out
            }
            Op::Pointwise { x, w, b } => {
                let [batch, c_in, t] = self.value(*x).dims3("pointwise").unwrap();
                let [c_out, _] = self.value(*w).dims2("pointwise").unwrap();
                let wd = self.value(*w).data();
                let xd = self.value(*x).data();
                let mut out = Vec::new();
                if rg(*x) {
                    let mut dx = vec![0.0; batch * c_in * t];
                    for bi in 0..batch {
                        gemm_tn(
                            wd,
                            &gd[bi * c_out * t..(bi + 1) * c_out * t],
                            &mut dx[bi * c_in * t..(bi + 1) * c_in * t],
                            c_out,
                            c_in,
                            t,
                        );
                    }
                    out.push((*x, like(*x, dx)));
                }
                if rg(*w) {
                    let mut dw = vec![0.0; c_out * c_in];
                    for bi in 0..batch {
                        gemm_nt(
                            &gd[bi * c_out * t..(bi + 1) * c_out * t],
                            &xd[bi * c_in * t..(bi + 1) * c_in * t],
                            &mut dw,
                            c_out,
                            t,
                            c_in,
                        );
                    }
                    out.push((*w, like(*w, dw)));
                }
                if let Some(b) = b {
                    let mut db = vec![0.0; c_out];
                    for (i, row) in gd.chunks(t).enumerate() {
                        db[i % c_out] += row.iter().sum::<f64>();
                    }
                    out.push((*b, like(*b, db)));
                }
                out
            }
            Op::LastStep(x) => {
                let [_, _, t] = self.value(*x).dims3("last_step").unwrap();
                let mut dx = vec![0.0; self.value(*x).numel()];
                for (row, gv) in dx.chunks_mut(t).zip(gd) {
                    row[t - 1] = *gv;
                }
                vec![(*x, like(*x, dx))]
            }
            Op::ToRows(x) => {
                let [b, c, t] = self.value(*x).dims3("to_rows").unwrap();
                let mut dx = vec![0.0; b * c * t];
                for bi in 0..b {
                    for ci in 0..c {
                        for ti in 0..t {
                            dx[(bi * c + ci) * t + ti] = gd[(bi * t + ti) * c + ci];
                        }
                    }
                }
                vec![(*x, like(*x, dx))]
            }
            Op::Mse { pred, target } => {
                let p = self.value(*pred).data();
                let n = p.len() as f64;
                let s = 2.0 * gd[0] / n;
                vec![(*pred, like(*pred, p.iter().zip(target.data()).map(|(a, b)| s * (a - b)).collect()))]
            }
            Op::CrossEntropy { logits, targets, probs } => {
                let [n, k] = self.value(*logits).dims2("cross_entropy").unwrap();
                let s = gd[0] / n as f64;
                let mut d: Vec<f64> = probs.iter().map(|p| p * s).collect();
                for (row, &t) in targets.iter().enumerate() {
                    d[row * k + t] -= s;
                }
                vec![(*logits, like(*logits, d))]
            }
            Op::Blur { k, taps } => {
                let len = *self.shape(*k).last().unwrap_or(&1);
                let r = taps.len() / 2;
                let mut dk = vec![0.0; gd.len()];
                for (src, dst) in gd.chunks(len).zip(dk.chunks_mut(len)) {
                    for (i, &gv) in src.iter().enumerate() {
                        for (j, &w) in taps.iter().enumerate() {
                            let idx = i as isize + j as isize - r as isize;
                            if idx >= 0 && (idx as usize) < len {
                                dst[idx as usize] += w * gv;
                            }
                        }
                    }
                }
                vec![(*k, like(*k, dk))]
            }
        }
    }
}

fn reduce_bcast(g: &Tensor, bc: Bcast, lhs: bool) -> Tensor {
    match (bc, lhs) {
        (Bcast::Same, _) | (Bcast::RhsScalar, true) | (Bcast::LhsScalar, false) => g.clone(),
        _ => Tensor::scalar(g.sum()),
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Row-wise softmax probabilities and the mean cross-entropy.
pub(crate) fn softmax_xent(logits: &[f64], targets: &[usize], k: usize) -> (Vec<f64>, f64) {
    let mut probs = vec![0.0; logits.len()];
    let mut loss = 0.0;
    for (row, (z, p)) in logits.chunks(k).zip(probs.chunks_mut(k)).enumerate() {
        let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for (pi, &zi) in p.iter_mut().zip(z) {
            *pi = (zi - m).exp();
            s += *pi;
        }
        p.iter_mut().for_each(|pi| *pi /= s);
        let lse = m + s.ln();
        loss += lse - z[targets[row]];
    }
    (probs, loss / targets.len().max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn vec_leaf(tape: &mut Tape, v: &[f64], rg: bool) -> Var {
        tape.leaf(Tensor::from_vec(v.to_vec()).unwrap(), rg)
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut tape = Tape::new();
        let x = vec_leaf(&mut tape, &[1.0, -2.0, 3.0, 0.5], true);
        let l = tape.sum(x);
        tape.backward(l).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[1.0; 4]);
    }

    #[test]
    fn repeated_backward_accumulates() {
        let mut tape = Tape::new();
        let x = vec_leaf(&mut tape, &[1.0, 2.0], true);
        let l = tape.sum(x);
        tape.backward(l).unwrap();
        tape.backward(l).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[2.0, 2.0]);
        tape.zero_grad();
        assert!(tape.grad(x).is_none());
    }

    #[test]
    fn independent_input_gets_zero_gradient() {
        let mut tape = Tape::new();
        let x = vec_leaf(&mut tape, &[1.0, 2.0], true);
        let y = vec_leaf(&mut tape, &[3.0, 4.0], true);
        let z = tape.scale(x, 0.0);
        let s = tape.add(z, y).unwrap();
        let l = tape.sum(s);
        tape.backward(l).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn backward_contract_errors() {
        let mut tape = Tape::new();
        let x = vec_leaf(&mut tape, &[1.0, 2.0], true);
        let y = tape.sin(x);
        assert!(matches!(tape.backward(y), Err(Error::Contract(_))));
        let c = tape.constant(Tensor::scalar(2.0));
        let d = tape.scale(c, 3.0);
        assert!(matches!(tape.backward(d), Err(Error::EmptyTape)));
    }

    #[test]
    fn elementwise_fixed_points() {
        let mut tape = Tape::new();
        let z = vec_leaf(&mut tape, &[0.0, -1.0, 1.0], false);
        let s = tape.sin(z);
        assert_eq!(tape.value(s).data()[0], 0.0);
        let r = tape.relu(z);
        assert_eq!(tape.value(r).data()[1], 0.0);
        let w = tape.swish(z);
        let expect = 1.0 / (1.0 + (-1.0f64).exp());
        assert!((tape.value(w).data()[2] - expect).abs() < 1e-15);
        assert!((expect - 0.731059).abs() < 1e-6);
        let lr = tape.leaky_relu(z);
        assert_eq!(tape.value(lr).data()[1], -0.01);
    }

    #[test]
    fn dropout_zero_rate_and_eval_are_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut tape = Tape::new();
        let x = vec_leaf(&mut tape, &[1.0, 2.0, 3.0], true);
        assert_eq!(tape.dropout(x, 0.0, true, &mut rng).unwrap(), x);
        assert_eq!(tape.dropout(x, 0.5, false, &mut rng).unwrap(), x);
        let d = tape.dropout(x, 0.5, true, &mut rng).unwrap();
        for (&v, &o) in tape.value(d).data().iter().zip(tape.value(x).data()) {
            assert!(v == 0.0 || v == 2.0 * o);
        }
    }

    #[test]
    fn weight_norm_examples() {
        let mut tape = Tape::new();
        let v = tape.leaf(Tensor::new(&[1, 2], vec![3.0, 4.0]).unwrap(), true);
        let g = tape.leaf(Tensor::from_vec(vec![1.0]).unwrap(), true);
        let w = tape.weight_norm(v, g).unwrap();
        let wd = tape.value(w).data();
        assert!((wd[0] - 0.6).abs() < 1e-15 && (wd[1] - 0.8).abs() < 1e-15);

        let v2 = tape.leaf(Tensor::new(&[1, 2], vec![6.0, 8.0]).unwrap(), true);
        let w2 = tape.weight_norm(v2, g).unwrap();
        assert_eq!(tape.value(w2).data(), tape.value(w).data());

        let gn = tape.leaf(Tensor::from_vec(vec![5.0]).unwrap(), true);
        let w3 = tape.weight_norm(v, gn).unwrap();
        assert_eq!(tape.value(w3).data(), &[3.0, 4.0]);

        let z = tape.leaf(Tensor::zeros(&[1, 2]), true);
        assert!(matches!(tape.weight_norm(z, g), Err(Error::Singularity { row: 0 })));
    }

    #[test]
    fn layer_norm_examples() {
        let mut tape = Tape::new();
        let gain = tape.leaf(Tensor::ones(&[2]), false);
        let bias = tape.leaf(Tensor::zeros(&[2]), false);
        let c = tape.leaf(Tensor::new(&[1, 2, 1], vec![4.0, 4.0]).unwrap(), false);
        let y = tape.layer_norm(c, gain, bias).unwrap();
        assert_eq!(tape.value(y).data(), &[0.0, 0.0]);

        let x = tape.leaf(Tensor::new(&[1, 2, 1], vec![1.0, 3.0]).unwrap(), false);
        let y = tape.layer_norm(x, gain, bias).unwrap();
        let expect = 1.0 / (1.0 + LAYER_NORM_EPS).sqrt();
        let yd = tape.value(y).data();
        assert!((yd[0] + expect).abs() < 1e-15 && (yd[1] - expect).abs() < 1e-15);

        let n = tape.leaf(Tensor::new(&[1, 2, 1], vec![-1.0, 1.0]).unwrap(), false);
        let y = tape.layer_norm(n, gain, bias).unwrap();
        for (a, b) in tape.value(y).data().iter().zip([-1.0, 1.0]) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn losses() {
        let mut tape = Tape::new();
        let x = vec_leaf(&mut tape, &[0.3, -0.2], true);
        let xv = tape.value(x).clone();
        let l = tape.mse(x, &xv).unwrap();
        assert_eq!(tape.value(l).item(), 0.0);

        let logits = tape.leaf(Tensor::zeros(&[3, 10]), true);
        let l = tape.cross_entropy(logits, &[0, 4, 9]).unwrap();
        assert!((tape.value(l).item() - 10f64.ln()).abs() < 1e-12);
        assert!(matches!(tape.cross_entropy(logits, &[0, 4, 10]), Err(Error::Data(_))));
    }

    #[test]
    fn shape_mismatch_is_dimension_error() {
        let mut tape = Tape::new();
        let a = vec_leaf(&mut tape, &[1.0, 2.0], false);
        let b = vec_leaf(&mut tape, &[1.0, 2.0, 3.0], false);
        assert!(matches!(tape.add(a, b), Err(Error::Dimension { .. })));
        let s = tape.constant(Tensor::scalar(2.0));
        let m = tape.mul(a, s).unwrap();
        assert_eq!(tape.value(m).data(), &[2.0, 4.0]);
    }
}
