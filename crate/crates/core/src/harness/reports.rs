//! Property reports: sampling-rate transfer and linear-RNN equivalence.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::conv::{causal_conv_direct, causal_conv_fft, linear_rnn_kernel, linear_rnn_unroll, BlurFilter, CkconvLayer, Horizon};
use crate::error::{Error, Result};
use crate::kernel_net::{KernelNetConfig, Resolution};
use crate::tensor::{matmul, Adam, ParamStore, Tape, Tensor};

/// Band-limited test signals: `channels` sums of sinusoids with at most
/// `max_cycles` cycles per `span` training steps, sampled every `1/upsample`
/// steps over `[0, span)`.
pub fn band_limited(batch: usize, channels: usize, span: usize, max_cycles: usize, upsample: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = (span - 1) * upsample + 1;
    let mut data = Vec::with_capacity(batch * channels * len);
    for _ in 0..batch * channels {
        let comps: Vec<(f64, f64, f64)> = (0..4)
            .map(|_| {
                let f = rng.gen_range(1..=max_cycles.max(1)) as f64 / span as f64;
                (f, rng.gen_range(0.0..2.0 * PI), rng.gen_range(0.2..1.0))
            })
            .collect();
        data.extend((0..len).map(|i| {
            let t = i as f64 / upsample as f64;
            comps.iter().map(|(f, ph, a)| a * (2.0 * PI * f * t + ph).sin()).sum::<f64>()
        }));
    }
    Tensor::from_parts(vec![batch, channels, len], data)
}

fn take_every(x: &Tensor, step: usize) -> Tensor {
    let t = x.shape()[2];
    let keep: Vec<usize> = (0..t).step_by(step).collect();
    let data = x.data().chunks(t).flat_map(|r| keep.iter().map(move |&i| r[i])).collect();
    Tensor::from_parts(vec![x.shape()[0], x.shape()[1], keep.len()], data)
}

fn rel_l2(a: &Tensor, b: &Tensor) -> f64 {
    a.rel_l2(b)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ResampleConfig {
    pub seq_len: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub omega0: f64,
    /// Highest input frequency, in cycles per `seq_len` steps.
    pub max_cycles: usize,
    /// Optimizer steps fitting the layer to a smooth reference filter first.
    pub train_steps: usize,
    pub seed: u64,
}

impl Default for ResampleConfig {
    fn default() -> Self {
        Self {
            seq_len: 256,
            in_channels: 2,
            out_channels: 2,
            omega0: 30.0,
            max_cycles: 8,
            train_steps: 0,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResampleReport {
    pub train_steps: usize,
    pub final_train_mse: Option<f64>,
    /// Relative L2 between stride-1 and stride-2 responses at shared steps.
    pub stride2_rel_err: f64,
    /// Relative L2 between 2× upsampled and native responses at shared steps.
    pub upsample2_rel_err: f64,
    pub blur_taps_r2: Vec<f64>,
}

/// Builds a CKConv layer (optionally fitted to a smooth filter), feeds it
/// band-limited inputs at the training rate, at half the rate and at twice
/// the rate, and compares the rescaled responses at common time steps.
pub fn resample_report(config: &ResampleConfig) -> Result<ResampleReport> {
    if config.seq_len < 4 || config.max_cycles == 0 {
        return Err(Error::Config("resample test needs seq_len >= 4 and max_cycles >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut store = ParamStore::new();
    let layer = CkconvLayer::new(
        &mut store,
        "probe",
        config.in_channels,
        config.out_channels,
        config.seq_len - 1,
        Horizon::Global,
        KernelNetConfig::sine(config.omega0),
        &mut rng,
    )?;
    let final_train_mse = if config.train_steps > 0 {
        Some(fit_reference_filter(&layer, &mut store, config, &mut rng)?)
    } else {
        None
    };

    let x = band_limited(4, config.in_channels, config.seq_len, config.max_cycles, 1, config.seed ^ 0xA5);
    let respond = |input: &Tensor, res: Resolution| -> Result<Tensor> {
        let mut tape = Tape::new();
        let v = tape.constant(input.clone());
        let y = layer.forward(&mut tape, &store, v, res, false)?;
        Ok(tape.value(y).clone())
    };
    let y1 = respond(&x, Resolution::default())?;
    let y2 = respond(&take_every(&x, 2), Resolution::stride(2))?;
    let stride2_rel_err = rel_l2(&y2, &take_every(&y1, 2));

    let xf = band_limited(4, config.in_channels, config.seq_len, config.max_cycles, 2, config.seed ^ 0xA5);
    let yf = respond(&xf, Resolution::upsample(2))?;
    let upsample2_rel_err = rel_l2(&take_every(&yf, 2), &y1);

    Ok(ResampleReport {
        train_steps: config.train_steps,
        final_train_mse,
        stride2_rel_err,
        upsample2_rel_err,
        blur_taps_r2: BlurFilter::new(2)?.taps,
    })
}

/// Fits the layer to a smooth band-pass (gamma-tone) filter on band-limited data.
fn fit_reference_filter(layer: &CkconvLayer, store: &mut ParamStore, config: &ResampleConfig, rng: &mut ChaCha8Rng) -> Result<f64> {
    let t = config.seq_len;
    let (ci, co) = (config.in_channels, config.out_channels);
    let reference: Vec<f64> = (0..co * ci * t)
        .map(|i| {
            let (pair, tau) = (i / t, (i % t) as f64);
            let scale = 1.0 + pair as f64 * 0.25;
            let a = 0.08 * t as f64;
            // gamma-tone shape: starts at zero, decays smoothly
            (tau / a) * (-tau / a).exp() * (2.0 * PI * tau / (0.2 * t as f64) * scale).cos() * 20.0 / t as f64
        })
        .collect();
    let reference = Tensor::from_parts(vec![co, ci, t], reference);
    let mut adam = Adam::new(store, 1e-3);
    let mut last = f64::NAN;
    for step in 0..config.train_steps {
        let x = band_limited(8, ci, t, config.max_cycles, 1, rng.gen::<u64>() ^ step as u64);
        let target = causal_conv_fft(&x, &reference, None)?;
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let y = layer.forward(&mut tape, store, xv, Resolution::default(), true)?;
        let loss = tape.mse(y, &target)?;
        last = tape.value(loss).item();
        tape.backward(loss)?;
        store.zero_grad();
        tape.accumulate_param_grads(store);
        adam.step(store)?;
    }
    Ok(last)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub cases: usize,
    pub hidden: usize,
    pub seq_len: usize,
    pub spectral_radius: f64,
    /// Worst relative L2 between the unrolled recurrence and the direct
    /// convolution with `W^τ U`.
    pub max_rel_err_direct: f64,
    /// Same against the FFT convolution.
    pub max_rel_err_fft: f64,
}

/// Largest singular value by power iteration on `AᵀA`.
pub fn spectral_norm(a: &Tensor) -> Result<f64> {
    let [_, n] = a.dims2("spectral_norm")?;
    let ata = matmul(&a.transpose2()?, a)?;
    let mut v = Tensor::new(&[n, 1], vec![1.0; n])?;
    let mut sigma2 = 0.0;
    for _ in 0..500 {
        let w = matmul(&ata, &v)?;
        let norm = w.norm();
        if norm == 0.0 {
            return Ok(0.0);
        }
        sigma2 = norm / v.norm();
        v = w.scaled(1.0 / norm);
    }
    Ok(sigma2.sqrt())
}

/// Random `W` with `‖W‖₂ = rho` (so its spectral radius is at most `rho`).
pub fn random_contraction<R: Rng + ?Sized>(rng: &mut R, h: usize, rho: f64) -> Result<Tensor> {
    let a = Tensor::new(&[h, h], (0..h * h).map(|_| rng.gen_range(-1.0..1.0)).collect())?;
    let s = spectral_norm(&a)?;
    Ok(if s > 0.0 { a.scaled(rho / s) } else { a })
}

/// Compares the unrolled linear recurrence with convolution by its kernel.
pub fn equivalence_report(cases: usize, max_hidden: usize, seq_len: usize, rho: f64, seed: u64) -> Result<EquivalenceReport> {
    if cases == 0 || max_hidden == 0 || seq_len == 0 {
        return Err(Error::Config("equivalence test needs cases, hidden and seq_len >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut worst_direct, mut worst_fft) = (0.0f64, 0.0f64);
    for _ in 0..cases {
        let h = rng.gen_range(1..=max_hidden);
        let c = rng.gen_range(1..=4);
        let w = random_contraction(&mut rng, h, rho)?;
        let u = Tensor::new(&[h, c], (0..h * c).map(|_| rng.gen_range(-1.0..1.0)).collect())?;
        let x = Tensor::new(&[2, c, seq_len], (0..2 * c * seq_len).map(|_| rng.gen_range(-1.0..1.0)).collect())?;
        let hidden = linear_rnn_unroll(&w, &u, &x, None)?;
        let kernel = linear_rnn_kernel(&w, &u, seq_len)?;
        worst_direct = worst_direct.max(rel_l2(&causal_conv_direct(&x, &kernel, None)?, &hidden));
        worst_fft = worst_fft.max(rel_l2(&causal_conv_fft(&x, &kernel, None)?, &hidden));
    }
    Ok(EquivalenceReport {
        cases,
        hidden: max_hidden,
        seq_len,
        spectral_radius: rho,
        max_rel_err_direct: worst_direct,
        max_rel_err_fft: worst_fft,
    })
}
