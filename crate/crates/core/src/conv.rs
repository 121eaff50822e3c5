//! Causal convolution operators and the continuous-kernel convolution layer.

use std::cell::RefCell;
use std::collections::HashMap;

use rand::Rng;

use crate::data::SequenceBatch;
use crate::error::{Error, Result};
use crate::kernel_net::{make_grid, max_kernel_len, normalize_step, KernelNet, KernelNetConfig, Resolution};
use crate::tensor::fft::{causal_conv_spectral, ConvDims};
use crate::tensor::{ParamId, ParamStore, Tape, Tensor, Var};

fn conv_dims(x: &Tensor, k: &Tensor, bias: Option<&[f64]>) -> Result<ConvDims> {
    let [batch, c_in, t] = x.dims3("causal_conv")?;
    let [c_out, kc, klen] = k.dims3("causal_conv")?;
    if kc != c_in || bias.is_some_and(|b| b.len() != c_out) {
        return Err(Error::Dimension {
            op: "causal_conv",
            lhs: x.shape().to_vec(),
            rhs: k.shape().to_vec(),
        });
    }
    Ok(ConvDims { batch, c_in, c_out, t, klen })
}

/// Reference causal convolution
/// `y_o(t) = Σ_c Σ_{τ=0}^{min(t, K−1)} x_c(t−τ)·k_{o,c}(τ) + bias_o`.
/// Channels are summed in the outer loop, lags in the inner loop.
pub fn causal_conv_direct(x: &Tensor, k: &Tensor, bias: Option<&[f64]>) -> Result<Tensor> {
    let ConvDims { batch, c_in, c_out, t, klen } = conv_dims(x, k, bias)?;
    let (xd, kd) = (x.data(), k.data());
    let mut out = vec![0.0; batch * c_out * t];
    for b in 0..batch {
        for o in 0..c_out {
            for ti in 0..t {
                let mut acc = 0.0;
                for c in 0..c_in {
                    let xr = &xd[(b * c_in + c) * t..(b * c_in + c + 1) * t];
                    let kr = &kd[(o * c_in + c) * klen..(o * c_in + c + 1) * klen];
                    for tau in 0..=ti.min(klen - 1) {
                        acc += xr[ti - tau] * kr[tau];
                    }
                }
                out[(b * c_out + o) * t + ti] = acc + bias.map_or(0.0, |bv| bv[o]);
            }
        }
    }
    Ok(Tensor::from_parts(vec![batch, c_out, t], out))
}

/// Same contract as [`causal_conv_direct`], computed with FFTs of length
/// `next_pow2(2T − 1)`. Kernels longer than the input are truncated.
pub fn causal_conv_fft(x: &Tensor, k: &Tensor, bias: Option<&[f64]>) -> Result<Tensor> {
    let mut dims = conv_dims(x, k, bias)?;
    if dims.t == 0 || dims.klen == 0 {
        return Ok(Tensor::zeros(&[dims.batch, dims.c_out, dims.t]));
    }
    let truncated;
    let kd = if dims.klen > dims.t {
        let rows: Vec<f64> = k.data().chunks(dims.klen).flat_map(|r| r[..dims.t].iter().copied()).collect();
        dims.klen = dims.t;
        truncated = rows;
        &truncated[..]
    } else {
        k.data()
    };
    let (mut y, _) = causal_conv_spectral(x.data(), kd, dims);
    if let Some(bv) = bias {
        for (i, row) in y.chunks_mut(dims.t).enumerate() {
            let b = bv[i % dims.c_out];
            row.iter_mut().for_each(|v| *v += b);
        }
    }
    Ok(Tensor::from_parts(vec![dims.batch, dims.c_out, dims.t], y))
}

/// Normalized Gaussian (σ = 0.5, μ = 0) applied along the kernel axis when
/// evaluating on a grid `ratio` times finer than the training grid.
#[derive(Clone, Debug, PartialEq)]
pub struct BlurFilter {
    pub ratio: usize,
    pub taps: Vec<f64>,
}

impl BlurFilter {
    pub const SIGMA: f64 = 0.5;

    pub fn new(ratio: usize) -> Result<Self> {
        if ratio == 0 {
            return Err(Error::Config("blur ratio must be positive".into()));
        }
        let r = ratio as isize;
        let raw: Vec<f64> = (-r..=r)
            .map(|off| (-((off * off) as f64) / (2.0 * Self::SIGMA * Self::SIGMA)).exp())
            .collect();
        let total: f64 = raw.iter().sum();
        Ok(Self {
            ratio,
            taps: raw.iter().map(|v| v / total).collect(),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Horizon {
    /// Kernel as long as the input (bounded by the training horizon).
    Global,
    Fixed(usize),
}

struct CachedKernel {
    version: u64,
    key: (usize, usize, Resolution),
    kernel: Tensor,
}

/// Convolution whose kernel is generated by a [`KernelNet`] on the relative
/// positions of the input grid.
pub struct CkconvLayer {
    pub kernel_net: KernelNet,
    pub in_channels: usize,
    pub out_channels: usize,
    pub bias: ParamId,
    /// Largest unitary relative step seen in training; mapped to position 1.
    pub max_step: usize,
    pub horizon: Horizon,
    cache: RefCell<Option<CachedKernel>>,
}

impl std::fmt::Debug for CkconvLayer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CkconvLayer")
            .field("in_channels", &self.in_channels)
            .field("out_channels", &self.out_channels)
            .field("max_step", &self.max_step)
            .field("horizon", &self.horizon)
            .finish()
    }
}

impl CkconvLayer {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        in_channels: usize,
        out_channels: usize,
        max_step: usize,
        horizon: Horizon,
        kernel: KernelNetConfig,
        rng: &mut R,
    ) -> Result<Self> {
        if in_channels == 0 || out_channels == 0 {
            return Err(Error::Config("convolution channels must be positive".into()));
        }
        let kernel_net = KernelNet::new(store, prefix, in_channels, out_channels, kernel, rng)?;
        let bias = store.add_no_decay(format!("{prefix}/bias"), Tensor::zeros(&[out_channels]));
        Ok(Self {
            kernel_net,
            in_channels,
            out_channels,
            bias,
            max_step: max_step.max(1),
            horizon,
            cache: RefCell::new(None),
        })
    }

    /// Kernel length used for an input of `t` samples at `resolution`.
    pub fn kernel_len(&self, t: usize, resolution: Resolution) -> usize {
        let mut k = t.min(max_kernel_len(self.max_step, resolution));
        if let Horizon::Fixed(h) = self.horizon {
            // fixed horizons are expressed in training steps
            k = k.min(h * resolution.upsample / resolution.stride).max(1);
        }
        k.max(1)
    }

    /// Sampled (and, for finer grids, blurred) kernel `[C_out, C_in, K]` on the tape.
    pub fn kernel(&self, tape: &mut Tape, store: &ParamStore, t: usize, resolution: Resolution) -> Result<Var> {
        let grid = make_grid(self.max_step, self.kernel_len(t, resolution), resolution)?;
        let mut k = self.kernel_net.sample_kernel(tape, store, &grid)?;
        if resolution.upsample > 1 {
            let blur = BlurFilter::new(resolution.upsample)?;
            k = tape.blur(k, &blur.taps)?;
        }
        Ok(k)
    }

    /// Kernel as a plain tensor, cached until parameters or grid change.
    pub fn kernel_cached(&self, store: &ParamStore, t: usize, resolution: Resolution) -> Result<Tensor> {
        let key = (self.max_step, self.kernel_len(t, resolution), resolution);
        if let Some(c) = self.cache.borrow().as_ref() {
            if c.version == store.version() && c.key == key {
                return Ok(c.kernel.clone());
            }
        }
        let mut tape = Tape::new();
        let k = self.kernel(&mut tape, store, t, resolution)?;
        let kernel = tape.value(k).clone();
        *self.cache.borrow_mut() = Some(CachedKernel {
            version: store.version(),
            key,
            kernel: kernel.clone(),
        });
        Ok(kernel)
    }

    pub fn invalidate_cache(&self) {
        self.cache.borrow_mut().take();
    }

    /// `x: [B, C_in, T]` → `[B, C_out, T]`. Responses at a resolution other
    /// than the training one are rescaled by `sr_train / sr_test` so they stay
    /// on the training scale. With `differentiable = false` the kernel is
    /// taken from the cache as a constant.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: Var,
        resolution: Resolution,
        differentiable: bool,
    ) -> Result<Var> {
        resolution.validate()?;
        let [_, c, t] = tape.value(x).dims3("ckconv")?;
        if c != self.in_channels {
            return Err(Error::Dimension {
                op: "ckconv",
                lhs: tape.shape(x).to_vec(),
                rhs: vec![self.out_channels, self.in_channels],
            });
        }
        if t == 0 {
            return Err(Error::Data("empty sequence".into()));
        }
        let k = if differentiable {
            self.kernel(tape, store, t, resolution)?
        } else {
            let kernel = self.kernel_cached(store, t, resolution)?;
            tape.constant(kernel)
        };
        let mut y = tape.causal_conv(x, k)?;
        if !resolution.is_identity() {
            y = tape.scale(y, 1.0 / resolution.ratio());
        }
        let b = tape.param(store, self.bias);
        tape.channel_bias(y, b)
    }

    /// Evaluation-only forward through the direct convolution, with a fixed
    /// summation order (channels outer, lag ascending). Slower than
    /// [`forward`](Self::forward) but bit-reproducible against the irregular path.
    pub fn forward_direct(&self, store: &ParamStore, x: &Tensor, resolution: Resolution) -> Result<Tensor> {
        resolution.validate()?;
        let [_, c, t] = x.dims3("ckconv")?;
        if c != self.in_channels || t == 0 {
            return Err(Error::Dimension {
                op: "ckconv",
                lhs: x.shape().to_vec(),
                rhs: vec![self.out_channels, self.in_channels],
            });
        }
        let mut k = self.kernel_cached(store, t, resolution)?;
        if !resolution.is_identity() {
            // scaling the kernel keeps the bias outside the rescale, as in `forward`
            k = k.scaled(1.0 / resolution.ratio());
        }
        causal_conv_direct(x, &k, Some(store.value(self.bias).data()))
    }

    /// Convolution over irregularly observed samples; see [`irregular_conv`].
    pub fn irregular(&self, store: &ParamStore, batch: &SequenceBatch) -> Result<Vec<Tensor>> {
        irregular_conv(self, store, batch)
    }
}

/// Inverse sample density `s(τ_i)` from local gaps: half the distance between
/// the two neighbours (the single gap at the ends). Near-uniform data gets
/// `s ≡ 1`.
pub fn inverse_density(times: &[f64]) -> Result<Vec<f64>> {
    check_sorted(times)?;
    let n = times.len();
    if n <= 1 {
        return Ok(vec![1.0; n]);
    }
    let gaps: Vec<f64> = times.windows(2).map(|w| w[1] - w[0]).collect();
    let (lo, hi) = gaps.iter().fold((f64::INFINITY, 0.0f64), |(l, h), &g| (l.min(g), h.max(g)));
    if hi - lo <= 1e-9 * hi {
        return Ok(vec![1.0; n]);
    }
    Ok((0..n)
        .map(|i| match i {
            0 => gaps[0],
            i if i == n - 1 => gaps[n - 2],
            i => 0.5 * (gaps[i - 1] + gaps[i]),
        })
        .collect())
}

fn check_sorted(times: &[f64]) -> Result<()> {
    if times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Data("sample positions must be strictly increasing".into()));
    }
    Ok(())
}

/// Monte-Carlo form of the continuous convolution over one irregular sample:
/// `y_o(t_j) = Σ_c Σ_{τ_i ≤ t_j} s(τ_i)·x_c(τ_i)·ψ_{o,c}(t_j − τ_i) + bias_o`.
///
/// `inputs` is `[C_in][n]`, `weights` is `[C_in][n]` (density per channel, ones
/// for unweighted channels), and `kernel_at` returns `[C_out, C_in, M]` for M
/// normalized positions. Offsets beyond `max_step` contribute nothing.
/// Responses are computed at the sample indices in `at` (all samples when
/// `None`), giving `[C_out, |at|]`.
pub fn irregular_sum(
    times: &[f64],
    inputs: &[Vec<f64>],
    weights: &[Vec<f64>],
    max_step: usize,
    bias: &[f64],
    at: Option<&[usize]>,
    kernel_at: impl FnOnce(&[f64]) -> Result<Tensor>,
) -> Result<Tensor> {
    check_sorted(times)?;
    let n = times.len();
    let c_in = inputs.len();
    let c_out = bias.len();
    let all: Vec<usize>;
    let queries = match at {
        Some(q) => {
            if q.iter().any(|&j| j >= n) {
                return Err(Error::Data("query index outside the sample".into()));
            }
            q
        }
        None => {
            all = (0..n).collect();
            &all
        }
    };
    if inputs.iter().chain(weights).any(|row| row.len() != n) || weights.len() != c_in {
        return Err(Error::Data("inputs and weights need one value per sample and channel".into()));
    }

    let mut offsets: Vec<f64> = Vec::new();
    let mut index: HashMap<u64, usize> = HashMap::new();
    for &j in queries {
        for i in (0..=j).rev() {
            let d = times[j] - times[i];
            if d > max_step as f64 {
                break;
            }
            index.entry(d.to_bits()).or_insert_with(|| {
                offsets.push(d);
                offsets.len() - 1
            });
        }
    }
    let positions: Vec<f64> = offsets.iter().map(|&d| normalize_step(d, max_step)).collect();
    let m = positions.len();
    let kernel = if m == 0 {
        Tensor::zeros(&[c_out, c_in, 0])
    } else {
        kernel_at(&positions)?
    };
    if kernel.shape() != [c_out, c_in, m] {
        return Err(Error::Dimension {
            op: "irregular_conv",
            lhs: kernel.shape().to_vec(),
            rhs: vec![c_out, c_in, m],
        });
    }
    let kd = kernel.data();
    let q = queries.len();
    let mut out = vec![0.0; c_out * q];
    for o in 0..c_out {
        for (qi, &j) in queries.iter().enumerate() {
            let mut acc = 0.0;
            for c in 0..c_in {
                let kr = &kd[(o * c_in + c) * m..(o * c_in + c + 1) * m];
                for i in (0..=j).rev() {
                    let d = times[j] - times[i];
                    if d > max_step as f64 {
                        break;
                    }
                    acc += (weights[c][i] * inputs[c][i]) * kr[index[&d.to_bits()]];
                }
            }
            out[o * q + qi] = acc + bias[o];
        }
    }
    Ok(Tensor::from_parts(vec![c_out, q], out))
}

/// Layer responses at each observed position of every sample in `batch`
/// (one `[C_out, n_obs]` tensor per sample). Data channels are weighted by the
/// batch density (ones if absent); when the layer has one more input channel
/// than the data, the observation mask is appended unweighted.
pub fn irregular_conv(layer: &CkconvLayer, store: &ParamStore, batch: &SequenceBatch) -> Result<Vec<Tensor>> {
    let [b, c, t] = batch.values.dims3("irregular_conv")?;
    let with_mask = match layer.in_channels {
        n if n == c => false,
        n if n == c + 1 => true,
        _ => {
            return Err(Error::Dimension {
                op: "irregular_conv",
                lhs: batch.values.shape().to_vec(),
                rhs: vec![layer.out_channels, layer.in_channels],
            })
        }
    };
    let bias = store.value(layer.bias).data().to_vec();
    let mut out = Vec::with_capacity(b);
    for bi in 0..b {
        let observed: Vec<usize> = (0..t).filter(|&ti| batch.mask.at(&[bi, 0, ti]) != 0.0).collect();
        let times: Vec<f64> = observed.iter().map(|&ti| batch.times[bi][ti]).collect();
        let density: Vec<f64> = match &batch.density {
            Some(d) => observed.iter().map(|&ti| d.at(&[bi, 0, ti])).collect(),
            None => vec![1.0; observed.len()],
        };
        if density.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::Data("density must be positive at observed positions".into()));
        }
        let mut inputs: Vec<Vec<f64>> = (0..c)
            .map(|ci| observed.iter().map(|&ti| batch.values.at(&[bi, ci, ti])).collect())
            .collect();
        let mut weights = vec![density; c];
        if with_mask {
            inputs.push(vec![1.0; observed.len()]);
            weights.push(vec![1.0; observed.len()]);
        }
        let y = irregular_sum(&times, &inputs, &weights, layer.max_step, &bias, None, |pos| {
            layer.kernel_net.eval_kernel(store, pos)
        })?;
        out.push(y);
    }
    Ok(out)
}

/// Kernel of a linear recurrent unit, `ψ(τ) = W^τ U` for `τ < t`: `[H, C, t]`.
pub fn linear_rnn_kernel(w: &Tensor, u: &Tensor, t: usize) -> Result<Tensor> {
    let [h, h2] = w.dims2("linear_rnn_kernel")?;
    let [hu, c] = u.dims2("linear_rnn_kernel")?;
    if h != h2 || hu != h {
        return Err(Error::Dimension {
            op: "linear_rnn_kernel",
            lhs: w.shape().to_vec(),
            rhs: u.shape().to_vec(),
        });
    }
    let mut out = vec![0.0; h * c * t];
    let mut power = u.clone();
    for tau in 0..t {
        for i in 0..h {
            for j in 0..c {
                out[(i * c + j) * t + tau] = power.at(&[i, j]);
            }
        }
        power = crate::tensor::matmul(w, &power)?;
    }
    Ok(Tensor::from_parts(vec![h, c, t], out))
}

/// Hidden states of the linear recurrence `h(t) = W h(t−1) + U x(t)` with
/// `h(−1) = h_init` (zero if absent): `x: [B, C, T]` → `[B, H, T]`.
pub fn linear_rnn_unroll(w: &Tensor, u: &Tensor, x: &Tensor, h_init: Option<&[f64]>) -> Result<Tensor> {
    let [h, _] = w.dims2("linear_rnn_unroll")?;
    let [_, c] = u.dims2("linear_rnn_unroll")?;
    let [batch, xc, t] = x.dims3("linear_rnn_unroll")?;
    if xc != c {
        return Err(Error::Dimension {
            op: "linear_rnn_unroll",
            lhs: x.shape().to_vec(),
            rhs: u.shape().to_vec(),
        });
    }
    let (wd, ud, xd) = (w.data(), u.data(), x.data());
    let mut out = vec![0.0; batch * h * t];
    for b in 0..batch {
        let mut state: Vec<f64> = h_init.map_or(vec![0.0; h], |s| s.to_vec());
        for ti in 0..t {
            let mut next = vec![0.0; h];
            for i in 0..h {
                let mut acc = 0.0;
                for j in 0..h {
                    acc += wd[i * h + j] * state[j];
                }
                for j in 0..c {
                    acc += ud[i * c + j] * xd[(b * c + j) * t + ti];
                }
                next[i] = acc;
            }
            for i in 0..h {
                out[(b * h + i) * t + ti] = next[i];
            }
            state = next;
        }
    }
    Ok(Tensor::from_parts(vec![batch, h, t], out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t3(shape: [usize; 3], data: &[f64]) -> Tensor {
        Tensor::new(&shape, data.to_vec()).unwrap()
    }

    #[test]
    fn delta_kernel_is_identity() {
        let x = t3([1, 1, 4], &[1.0, -2.0, 3.0, 0.5]);
        let k = t3([1, 1, 3], &[1.0, 0.0, 0.0]);
        assert_eq!(causal_conv_direct(&x, &k, None).unwrap(), x);
        assert!(causal_conv_fft(&x, &k, None).unwrap().rel_l2(&x) < 1e-14);
    }

    #[test]
    fn shifted_kernel_hand_example() {
        let x = t3([1, 1, 3], &[1.0, 2.0, 3.0]);
        let k = t3([1, 1, 2], &[0.0, 1.0]);
        assert_eq!(causal_conv_direct(&x, &k, None).unwrap().data(), &[0.0, 1.0, 2.0]);
        let f = causal_conv_fft(&x, &k, None).unwrap();
        for (a, b) in f.data().iter().zip([0.0, 1.0, 2.0]) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn channel_sum() {
        let x = t3([1, 2, 3], &[1.0, 2.0, 3.0, 10.0, 20.0, 30.0]);
        let k = t3([1, 2, 1], &[1.0, 1.0]);
        assert_eq!(causal_conv_direct(&x, &k, None).unwrap().data(), &[11.0, 22.0, 33.0]);
        assert!(causal_conv_direct(&x, &t3([1, 3, 1], &[1.0; 3]), None).is_err());
    }

    #[test]
    fn long_kernel_truncates_and_bias_adds() {
        let x = t3([1, 1, 2], &[1.0, 1.0]);
        let k = t3([1, 1, 4], &[1.0, 2.0, 3.0, 4.0]);
        let d = causal_conv_direct(&x, &k, Some(&[0.5])).unwrap();
        assert_eq!(d.data(), &[1.5, 3.5]);
        assert!(causal_conv_fft(&x, &k, Some(&[0.5])).unwrap().rel_l2(&d) < 1e-14);
    }

    #[test]
    fn fft_zero_kernel_and_linearity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::new(&[2, 2, 9], (0..36).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let z = causal_conv_fft(&x, &Tensor::zeros(&[3, 2, 9]), None).unwrap();
        assert!(z.max_abs() < 1e-15);
        let k = Tensor::new(&[3, 2, 9], (0..54).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let y = causal_conv_fft(&x, &k, None).unwrap();
        let y3 = causal_conv_fft(&x.scaled(3.0), &k, None).unwrap();
        assert!(y3.rel_l2(&y.scaled(3.0)) < 1e-13);
    }

    #[test]
    fn blur_taps_closed_form() {
        let f = BlurFilter::new(2).unwrap();
        let raw = [(-8.0f64).exp(), (-2.0f64).exp(), 1.0, (-2.0f64).exp(), (-8.0f64).exp()];
        let total: f64 = raw.iter().sum();
        assert_eq!(f.taps.len(), 5);
        for (a, b) in f.taps.iter().zip(raw) {
            assert!((a - b / total).abs() <= 1e-12);
        }
        assert!((raw[0] - 3.35e-4).abs() < 1e-6 && (raw[1] - 0.1353).abs() < 1e-4);
        assert!((f.taps.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(f.taps[0], f.taps[4]);
    }

    #[test]
    fn linear_rnn_examples() {
        let w = Tensor::new(&[1, 1], vec![0.5]).unwrap();
        let u = Tensor::new(&[1, 1], vec![1.0]).unwrap();
        assert_eq!(linear_rnn_kernel(&w, &u, 3).unwrap().data(), &[1.0, 0.5, 0.25]);
        let mut delta = Tensor::zeros(&[1, 1, 4]);
        delta.set(&[0, 0, 0], 1.0);
        assert_eq!(linear_rnn_unroll(&w, &u, &delta, None).unwrap().data(), &[1.0, 0.5, 0.25, 0.125]);

        let one = Tensor::new(&[1, 1], vec![1.0]).unwrap();
        let x = t3([1, 1, 4], &[1.0, 2.0, -1.0, 0.5]);
        assert_eq!(linear_rnn_unroll(&one, &one, &x, None).unwrap().data(), &[1.0, 3.0, 2.0, 2.5]);

        let u2 = Tensor::new(&[2, 1], vec![0.3, -0.7]).unwrap();
        let k = linear_rnn_kernel(&Tensor::eye(2), &u2, 5).unwrap();
        for tau in 0..5 {
            assert_eq!(k.at(&[0, 0, tau]), 0.3);
            assert_eq!(k.at(&[1, 0, tau]), -0.7);
        }
    }

    #[test]
    fn inverse_density_rules() {
        assert_eq!(inverse_density(&[0.0, 1.0, 2.0, 3.0]).unwrap(), vec![1.0; 4]);
        assert_eq!(inverse_density(&[0.0, 1.0, 3.0, 7.0]).unwrap(), vec![1.0, 1.5, 3.0, 4.0]);
        assert!(matches!(inverse_density(&[0.0, 2.0, 1.0]), Err(Error::Data(_))));
    }

    #[test]
    fn irregular_sum_rejects_unsorted() {
        let r = irregular_sum(&[1.0, 0.0], &[vec![1.0, 1.0]], &[vec![1.0, 1.0]], 4, &[0.0], None, |p| {
            Ok(Tensor::zeros(&[1, 1, p.len()]))
        });
        assert!(matches!(r, Err(Error::Data(_))));
    }
}
