//! Continuous convolutional kernels: a small weight-normalized MLP mapping a
//! normalized relative position to an `(out, in)` matrix of kernel values.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{ParamId, ParamStore, Tape, Tensor, Var};

/// Maps a unitary relative step onto `[-1, 1]`, with `max_step` mapped to 1.
///
/// The map is fixed at training time; subsampled or upsampled grids reuse it.
pub fn normalize_step(step: f64, max_step: usize) -> f64 {
    2.0 * step / max_step as f64 - 1.0
}

/// Test-time sampling relative to training: keep every `stride`-th step, or
/// sample `upsample` points per training step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Resolution {
    pub stride: usize,
    pub upsample: usize,
}

impl Default for Resolution {
    fn default() -> Self {
        Self { stride: 1, upsample: 1 }
    }
}

impl Resolution {
    pub fn stride(n: usize) -> Self {
        Self { stride: n, upsample: 1 }
    }

    pub fn upsample(r: usize) -> Self {
        Self { stride: 1, upsample: r }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stride == 0 || self.upsample == 0 {
            return Err(Error::Config("sampling ratio must be positive".into()));
        }
        if self.stride > 1 && self.upsample > 1 {
            return Err(Error::Config(
                "stride and upsample cannot both exceed 1 (non-integer rate ratio)".into(),
            ));
        }
        Ok(())
    }

    /// `sr_test / sr_train`.
    pub fn ratio(&self) -> f64 {
        self.upsample as f64 / self.stride as f64
    }

    /// Distance between consecutive test samples, in training steps.
    pub fn spacing(&self) -> f64 {
        self.stride as f64 / self.upsample as f64
    }

    pub fn is_identity(&self) -> bool {
        self.stride == 1 && self.upsample == 1
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PositionGrid {
    positions: Vec<f64>,
    max_step: usize,
    resolution: Resolution,
}

impl PositionGrid {
    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn max_step(&self) -> usize {
        self.max_step
    }

    pub fn resolution(&self) -> Resolution {
        self.resolution
    }

    /// Identifies the grid for kernel caching.
    pub fn fingerprint(&self) -> (usize, usize, Resolution) {
        (self.max_step, self.positions.len(), self.resolution)
    }
}

/// Kernel grid of `kernel_len` relative positions spaced by the resolution,
/// normalized with the training horizon `max_step`.
pub fn make_grid(max_step: usize, kernel_len: usize, resolution: Resolution) -> Result<PositionGrid> {
    resolution.validate()?;
    if kernel_len == 0 {
        return Err(Error::InvalidLength("kernel length must be at least 1".into()));
    }
    if max_step == 0 {
        return Err(Error::Config("training horizon must be at least one step".into()));
    }
    let Resolution { stride, upsample } = resolution;
    let span = (kernel_len - 1) * stride;
    if span > max_step * upsample {
        return Err(Error::Horizon {
            span: span.div_ceil(upsample),
            max_step,
        });
    }
    let positions = (0..kernel_len)
        .map(|k| {
            let step = if upsample == 1 {
                (k * stride) as f64
            } else {
                k as f64 / upsample as f64
            };
            normalize_step(step, max_step)
        })
        .collect();
    Ok(PositionGrid {
        positions,
        max_step,
        resolution,
    })
}

/// Longest kernel that fits in the training horizon at the given resolution.
pub fn max_kernel_len(max_step: usize, resolution: Resolution) -> usize {
    max_step * resolution.upsample / resolution.stride + 1
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Nonlinearity {
    Sine,
    Relu,
    LeakyRelu,
    Swish,
}

impl Nonlinearity {
    pub fn is_piecewise(self) -> bool {
        !matches!(self, Nonlinearity::Sine)
    }

    pub fn apply(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Nonlinearity::Sine => tape.sin(x),
            Nonlinearity::Relu => tape.relu(x),
            Nonlinearity::LeakyRelu => tape.leaky_relu(x),
            Nonlinearity::Swish => tape.swish(x),
        }
    }

    pub fn eval(self, x: f64) -> f64 {
        match self {
            Nonlinearity::Sine => x.sin(),
            Nonlinearity::Relu => x.max(0.0),
            Nonlinearity::LeakyRelu => {
                if x > 0.0 {
                    x
                } else {
                    crate::tensor::tape::LEAKY_SLOPE * x
                }
            }
            Nonlinearity::Swish => x * crate::tensor::tape::sigmoid(x),
        }
    }
}

impl std::str::FromStr for Nonlinearity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sine" | "sin" => Ok(Self::Sine),
            "relu" => Ok(Self::Relu),
            "leaky_relu" | "leakyrelu" => Ok(Self::LeakyRelu),
            "swish" => Ok(Self::Swish),
            other => Err(Error::Config(format!("unknown nonlinearity `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelInit {
    /// Uniform weights, biases spread across each Sine period.
    Siren,
    /// Fan-in uniform weights, zero biases.
    ZeroBias,
    /// Fan-in uniform weights, one ReLU knot per unit at equispaced inputs.
    UniformKnots,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelNetConfig {
    pub hidden: usize,
    /// Number of affine layers, including the output layer.
    pub layers: usize,
    pub nonlinearity: Nonlinearity,
    pub omega0: f64,
    pub init: KernelInit,
}

impl Default for KernelNetConfig {
    fn default() -> Self {
        Self {
            hidden: 32,
            layers: 3,
            nonlinearity: Nonlinearity::Sine,
            omega0: 30.0,
            init: KernelInit::Siren,
        }
    }
}

impl KernelNetConfig {
    pub fn sine(omega0: f64) -> Self {
        Self {
            omega0,
            ..Self::default()
        }
    }

    pub fn piecewise(nonlinearity: Nonlinearity, init: KernelInit) -> Self {
        Self {
            nonlinearity,
            init,
            omega0: 1.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.layers < 2 {
            return Err(Error::Config(format!(
                "kernel net needs hidden ≥ 1 and at least 2 layers (got {} × {})",
                self.layers, self.hidden
            )));
        }
        if !(self.omega0 > 0.0 && self.omega0.is_finite()) {
            return Err(Error::Config(format!("omega0 must be positive, got {}", self.omega0)));
        }
        Ok(())
    }

    /// Scalar parameter count of a kernel net with `outputs = N_out·N_in`.
    pub fn param_count(&self, outputs: usize) -> usize {
        // each layer: direction (rows × cols) + gain (rows) + bias (rows)
        let mut count = 0;
        let mut fan_in = 1;
        for l in 0..self.layers {
            let rows = if l + 1 == self.layers { outputs } else { self.hidden };
            count += rows * fan_in + 2 * rows;
            fan_in = rows;
        }
        count
    }
}

#[derive(Clone, Copy, Debug)]
pub struct KernelLayer {
    pub v: ParamId,
    pub g: ParamId,
    pub b: ParamId,
}

#[derive(Clone, Debug)]
pub struct KernelNet {
    pub config: KernelNetConfig,
    pub in_channels: usize,
    pub out_channels: usize,
    pub layers: Vec<KernelLayer>,
}

impl KernelNet {
    /// Registers the parameters under `prefix` and initializes them.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        in_channels: usize,
        out_channels: usize,
        config: KernelNetConfig,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let outputs = in_channels * out_channels;
        let mut layers = Vec::with_capacity(config.layers);
        let mut fan_in = 1;
        for l in 0..config.layers {
            let rows = if l + 1 == config.layers { outputs } else { config.hidden };
            // placeholder values; overwritten by the initializer below
            let v = store.add(format!("{prefix}/kernel_net/l{l}/v"), Tensor::ones(&[rows, fan_in]));
            let g = store.add_no_decay(format!("{prefix}/kernel_net/l{l}/g"), Tensor::ones(&[rows]));
            let b = store.add_no_decay(format!("{prefix}/kernel_net/l{l}/b"), Tensor::zeros(&[rows]));
            layers.push(KernelLayer { v, g, b });
            fan_in = rows;
        }
        let net = Self {
            config,
            in_channels,
            out_channels,
            layers,
        };
        match net.config.init {
            KernelInit::Siren => init_siren(&net, store, rng)?,
            KernelInit::ZeroBias => init_fan_in(&net, store, rng)?,
            KernelInit::UniformKnots => init_uniform_knots(&net, store, rng)?,
        }
        Ok(net)
    }

    pub fn outputs(&self) -> usize {
        self.in_channels * self.out_channels
    }

    fn is_last(&self, l: usize) -> bool {
        l + 1 == self.layers.len()
    }

    /// Effective weight matrix `g · v / ‖v‖` of layer `l`.
    pub fn effective_weight(&self, store: &ParamStore, l: usize) -> Tensor {
        let layer = self.layers[l];
        let v = store.value(layer.v);
        let g = store.value(layer.g).data();
        let cols = v.shape()[1];
        let mut w = v.clone();
        for (i, row) in w.data_mut().chunks_mut(cols).enumerate() {
            let n = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            row.iter_mut().for_each(|x| *x *= g[i] / n);
        }
        w
    }

    /// Network output for every position: `[K, N_out·N_in]`.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, positions: &[f64]) -> Result<Var> {
        self.forward_until(tape, store, positions, self.layers.len())
    }

    /// Hidden representation after the first `depth` layers (activations applied
    /// to all but the output layer).
    fn forward_until(&self, tape: &mut Tape, store: &ParamStore, positions: &[f64], depth: usize) -> Result<Var> {
        let input = Tensor::new(&[positions.len(), 1], positions.to_vec())?;
        let mut h = tape.constant(input);
        for (l, layer) in self.layers.iter().enumerate().take(depth) {
            let v = tape.param(store, layer.v);
            let g = tape.param(store, layer.g);
            let b = tape.param(store, layer.b);
            let w = tape.weight_norm(v, g)?;
            h = tape.linear(h, w, Some(b))?;
            if !self.is_last(l) {
                if self.config.nonlinearity == Nonlinearity::Sine {
                    h = tape.scale(h, self.config.omega0);
                }
                h = self.config.nonlinearity.apply(tape, h);
            }
        }
        Ok(h)
    }

    /// Kernel `[N_out, N_in, K]` sampled on `grid`, differentiable into the
    /// network parameters.
    pub fn sample_kernel(&self, tape: &mut Tape, store: &ParamStore, grid: &PositionGrid) -> Result<Var> {
        if grid.is_empty() {
            return Err(Error::InvalidLength("empty position grid".into()));
        }
        self.sample_at(tape, store, grid.positions())
    }

    /// Kernel sampled at arbitrary normalized positions.
    pub fn sample_at(&self, tape: &mut Tape, store: &ParamStore, positions: &[f64]) -> Result<Var> {
        let out = self.forward(tape, store, positions)?;
        if !tape.value(out).all_finite() {
            return Err(Error::KernelDivergence {
                omega0: self.config.omega0,
            });
        }
        let t = tape.transpose(out)?;
        tape.reshape(t, &[self.out_channels, self.in_channels, positions.len()])
    }

    /// Plain evaluation without recording gradients: `[N_out, N_in, K]`.
    pub fn eval_kernel(&self, store: &ParamStore, positions: &[f64]) -> Result<Tensor> {
        let mut tape = Tape::new();
        let k = self.sample_at(&mut tape, store, positions)?;
        Ok(tape.value(k).clone())
    }
}

fn set_layer(store: &mut ParamStore, layer: KernelLayer, v: Tensor, bias: Vec<f64>) {
    let rows = v.shape()[0];
    let cols = v.shape()[1];
    let gains: Vec<f64> = v
        .data()
        .chunks(cols)
        .map(|r| r.iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    *store.value_mut(layer.g) = Tensor::from_parts(vec![rows], gains);
    *store.value_mut(layer.b) = Tensor::from_parts(vec![rows], bias);
    *store.value_mut(layer.v) = v;
}

const MAX_RESAMPLE: usize = 100;

/// Samples a `[rows, cols]` matrix from `U(-bound, bound)`, redrawing rows of
/// zero norm.
fn uniform_rows<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, bound: f64) -> Result<Tensor> {
    let mut data = Vec::with_capacity(rows * cols);
    for row in 0..rows {
        let mut attempt = 0;
        loop {
            let r: Vec<f64> = (0..cols).map(|_| rng.gen_range(-bound..bound)).collect();
            if r.iter().any(|&x| x != 0.0) {
                data.extend(r);
                break;
            }
            attempt += 1;
            if attempt >= MAX_RESAMPLE {
                return Err(Error::Singularity { row });
            }
        }
    }
    Ok(Tensor::from_parts(vec![rows, cols], data))
}

/// SIREN initialization. First-layer weights are `U(-1, 1)`, later weights
/// `U(±√(6/fan_in)/ω0)`. Each Sine unit's bias is drawn from
/// `U(-π/‖W_i‖, π/‖W_i‖)`; the linear output layer starts with zero bias.
/// Gains are set so the effective weights equal the sampled ones.
pub fn init_siren<R: Rng + ?Sized>(net: &KernelNet, store: &mut ParamStore, rng: &mut R) -> Result<()> {
    let omega0 = net.config.omega0;
    if !(omega0 > 0.0) {
        return Err(Error::Config(format!("omega0 must be positive, got {omega0}")));
    }
    for (l, &layer) in net.layers.iter().enumerate() {
        let shape = store.value(layer.v).shape().to_vec();
        let (rows, fan_in) = (shape[0], shape[1]);
        let bound = if l == 0 { 1.0 } else { (6.0 / fan_in as f64).sqrt() / omega0 };
        let v = uniform_rows(rng, rows, fan_in, bound)?;
        let bias = if net.is_last(l) {
            vec![0.0; rows]
        } else {
            v.data()
                .chunks(fan_in)
                .map(|r| {
                    let period = PI / r.iter().map(|x| x * x).sum::<f64>().sqrt();
                    rng.gen_range(-period..=period)
                })
                .collect()
        };
        set_layer(store, layer, v, bias);
    }
    Ok(())
}

/// Fan-in uniform weights `U(±1/√fan_in)` with zero biases.
pub fn init_fan_in<R: Rng + ?Sized>(net: &KernelNet, store: &mut ParamStore, rng: &mut R) -> Result<()> {
    for &layer in &net.layers {
        let shape = store.value(layer.v).shape().to_vec();
        let (rows, fan_in) = (shape[0], shape[1]);
        let v = uniform_rows(rng, rows, fan_in, 1.0 / (fan_in as f64).sqrt())?;
        set_layer(store, layer, v, vec![0.0; rows]);
    }
    Ok(())
}

/// Places one knot per hidden unit at equispaced inputs in `[-1, 1]`:
/// layer `l`'s bias is `b_i = −W_i · h^(l−1)(x_i)`, where `h^(l−1)` is the
/// already-initialized network up to the previous layer.
pub fn init_uniform_knots<R: Rng + ?Sized>(net: &KernelNet, store: &mut ParamStore, rng: &mut R) -> Result<()> {
    init_fan_in(net, store, rng)?;
    for l in 0..net.layers.len() - 1 {
        let w = net.effective_weight(store, l);
        let (rows, fan_in) = (w.shape()[0], w.shape()[1]);
        let knots = knot_positions(rows);
        let prev = if l == 0 {
            Tensor::from_parts(vec![rows, 1], knots)
        } else {
            let mut tape = Tape::new();
            let h = net.forward_until(&mut tape, store, &knots, l)?;
            tape.value(h).clone()
        };
        let bias: Vec<f64> = (0..rows)
            .map(|i| {
                let wi = &w.data()[i * fan_in..(i + 1) * fan_in];
                let hi = &prev.data()[i * fan_in..(i + 1) * fan_in];
                -wi.iter().zip(hi).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect();
        *store.value_mut(net.layers[l].b) = Tensor::from_parts(vec![rows], bias);
    }
    Ok(())
}

/// `count` equispaced points covering `[-1, 1]`.
pub fn knot_positions(count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![0.0];
    }
    (0..count)
        .map(|i| -1.0 + 2.0 * i as f64 / (count - 1) as f64)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn net(cfg: KernelNetConfig, cin: usize, cout: usize, seed: u64) -> (KernelNet, ParamStore) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = KernelNet::new(&mut store, "k", cin, cout, cfg, &mut rng).unwrap();
        (n, store)
    }

    /// Plain-loop evaluation of the network at one position.
    fn scalar_reference(net: &KernelNet, store: &ParamStore, x: f64) -> Vec<f64> {
        let mut h = vec![x];
        for l in 0..net.layers.len() {
            let w = net.effective_weight(store, l);
            let b = store.value(net.layers[l].b).data();
            let cols = w.shape()[1];
            let mut next = Vec::new();
            for i in 0..w.shape()[0] {
                let mut z = b[i];
                for j in 0..cols {
                    z += w.data()[i * cols + j] * h[j];
                }
                if l + 1 < net.layers.len() {
                    z = match net.config.nonlinearity {
                        Nonlinearity::Sine => (net.config.omega0 * z).sin(),
                        other => other.eval(z),
                    };
                }
                next.push(z);
            }
            h = next;
        }
        h
    }

    #[test]
    fn grid_examples() {
        let g = make_grid(4, 5, Resolution::default()).unwrap();
        assert_eq!(g.positions(), &[-1.0, -0.5, 0.0, 0.5, 1.0]);
        let g = make_grid(4, 3, Resolution::stride(2)).unwrap();
        assert_eq!(g.positions(), &[-1.0, 0.0, 1.0]);
        let g = make_grid(181, 23, Resolution::stride(8)).unwrap();
        let full = make_grid(181, 182, Resolution::default()).unwrap();
        for (k, p) in g.positions().iter().enumerate() {
            assert_eq!(*p, full.positions()[8 * k]);
        }
        assert_eq!(*g.positions().last().unwrap(), normalize_step(176.0, 181));
    }

    #[test]
    fn grid_horizon_and_config_errors() {
        assert!(matches!(make_grid(4, 4, Resolution::stride(2)), Err(Error::Horizon { .. })));
        assert!(matches!(make_grid(4, 6, Resolution::default()), Err(Error::Horizon { .. })));
        assert!(make_grid(4, 0, Resolution::default()).is_err());
        assert!(make_grid(4, 2, Resolution { stride: 0, upsample: 1 }).is_err());
        let up = make_grid(4, 9, Resolution::upsample(2)).unwrap();
        assert_eq!(up.positions()[1], normalize_step(0.5, 4));
        assert_eq!(*up.positions().last().unwrap(), 1.0);
    }

    #[test]
    fn grid_is_strictly_increasing_in_range() {
        for (n, k, s) in [(10, 11, 1), (10, 6, 2), (181, 46, 4), (7, 1, 3)] {
            let g = make_grid(n, k, Resolution::stride(s)).unwrap();
            assert!(g.positions().windows(2).all(|w| w[0] < w[1]));
            assert!(g.positions().iter().all(|p| (-1.0..=1.0).contains(p)));
        }
    }

    #[test]
    fn siren_bias_within_period() {
        let (n, store) = net(KernelNetConfig::sine(30.0), 2, 3, 7);
        for (l, layer) in n.layers.iter().enumerate() {
            let w = n.effective_weight(&store, l);
            let cols = w.shape()[1];
            for (i, b) in store.value(layer.b).data().iter().enumerate() {
                let norm = w.data()[i * cols..(i + 1) * cols].iter().map(|x| x * x).sum::<f64>().sqrt();
                assert!(b.abs() <= PI / norm);
            }
        }
        // first layer weights in U(-1, 1); gauge g = ‖v‖
        let v = store.value(n.layers[0].v);
        assert!(v.data().iter().all(|x| x.abs() <= 1.0));
        let w = n.effective_weight(&store, 1);
        for (a, b) in w.data().iter().zip(store.value(n.layers[1].v).data()) {
            assert!((a - b).abs() < 1e-15);
        }
        let bound = (6.0f64 / 32.0).sqrt() / 30.0;
        assert!(w.data().iter().all(|x| x.abs() <= bound));
    }

    #[test]
    fn zero_output_layer_gives_zero_kernel() {
        let (n, mut store) = net(KernelNetConfig::sine(10.0), 2, 2, 1);
        let last = *n.layers.last().unwrap();
        store.value_mut(last.g).data_mut().fill(0.0);
        store.value_mut(last.b).data_mut().fill(0.0);
        let grid = make_grid(9, 10, Resolution::default()).unwrap();
        let k = n.eval_kernel(&store, grid.positions()).unwrap();
        assert_eq!(k.shape(), &[2, 2, 10]);
        assert!(k.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_sine_layer_closed_form() {
        // one hidden Sine unit with W = [[1]], b = 0, identity readout
        let cfg = KernelNetConfig {
            hidden: 1,
            layers: 2,
            omega0: PI / 2.0,
            ..KernelNetConfig::default()
        };
        let (n, mut store) = net(cfg, 1, 1, 0);
        for layer in &n.layers {
            *store.value_mut(layer.v) = Tensor::new(&[1, 1], vec![1.0]).unwrap();
            *store.value_mut(layer.g) = Tensor::from_vec(vec![1.0]).unwrap();
            *store.value_mut(layer.b) = Tensor::from_vec(vec![0.0]).unwrap();
        }
        let k = n.eval_kernel(&store, &[1.0, 0.0]).unwrap();
        assert!((k.data()[0] - 1.0).abs() < 1e-15);
        assert_eq!(k.data()[1], 0.0);
    }

    #[test]
    fn sampled_kernel_matches_scalar_reference() {
        for nl in [Nonlinearity::Sine, Nonlinearity::Relu, Nonlinearity::Swish, Nonlinearity::LeakyRelu] {
            let cfg = KernelNetConfig {
                nonlinearity: nl,
                init: if nl == Nonlinearity::Sine { KernelInit::Siren } else { KernelInit::UniformKnots },
                omega0: 12.0,
                ..KernelNetConfig::default()
            };
            let (n, store) = net(cfg, 2, 3, 11);
            let grid = make_grid(6, 7, Resolution::default()).unwrap();
            let k = n.eval_kernel(&store, grid.positions()).unwrap();
            for (p, &x) in grid.positions().iter().enumerate() {
                let r = scalar_reference(&n, &store, x);
                for o in 0..3 {
                    for c in 0..2 {
                        assert!((k.at(&[o, c, p]) - r[o * 2 + c]).abs() <= 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn stride_grid_samples_are_exact_subsequence() {
        let (n, store) = net(KernelNetConfig::sine(25.0), 1, 2, 3);
        let full = n.eval_kernel(&store, make_grid(40, 41, Resolution::default()).unwrap().positions()).unwrap();
        for s in [2, 4, 5, 8] {
            let g = make_grid(40, max_kernel_len(40, Resolution::stride(s)), Resolution::stride(s)).unwrap();
            let sub = n.eval_kernel(&store, g.positions()).unwrap();
            for o in 0..2 {
                for k in 0..g.len() {
                    assert_eq!(sub.at(&[o, 0, k]), full.at(&[o, 0, k * s]));
                }
            }
        }
    }

    #[test]
    fn uniform_knots_zero_preactivation_at_knots() {
        let cfg = KernelNetConfig::piecewise(Nonlinearity::Relu, KernelInit::UniformKnots);
        let (n, store) = net(cfg, 1, 1, 5);
        let knots = knot_positions(32);
        assert_eq!(knots[0], -1.0);
        assert_eq!(knots[31], 1.0);
        let spacing: Vec<f64> = knots.windows(2).map(|w| w[1] - w[0]).collect();
        assert!(spacing.iter().all(|d| (d - 2.0 / 31.0).abs() < 1e-12));

        // layer 1: unit i has zero preactivation at knot x_i
        let w0 = n.effective_weight(&store, 0);
        let b0 = store.value(n.layers[0].b).data();
        for (i, &x) in knots.iter().enumerate() {
            assert!((w0.data()[i] * x + b0[i]).abs() < 1e-14);
        }
        // deeper layer: preactivation of unit i vanishes when the input is x_i
        let w1 = n.effective_weight(&store, 1);
        let b1 = store.value(n.layers[1].b).data();
        for (i, &x) in knots.iter().enumerate() {
            let h: Vec<f64> = (0..32).map(|j| (w0.data()[j] * x + b0[j]).max(0.0)).collect();
            let pre: f64 = (0..32).map(|j| w1.data()[i * 32 + j] * h[j]).sum::<f64>() + b1[i];
            assert!(pre.abs() < 1e-12, "unit {i}: {pre}");
        }
    }

    #[test]
    fn param_count_formula() {
        let cfg = KernelNetConfig::default();
        let (n, store) = net(cfg.clone(), 3, 4, 0);
        assert_eq!(store.numel(), cfg.param_count(n.outputs()));
        assert_eq!(cfg.param_count(1), 96 + 1088 + 34);
    }
}
