//! A linear recurrence `h(t) = W h(t−1) + U x(t)` is a convolution with the
//! kernel `ψ(τ) = W^τ U`.
//!
//! cargo run --release --example linear_rnn

use ckconv::conv::{causal_conv_direct, linear_rnn_kernel, linear_rnn_unroll};
use ckconv::harness::{equivalence_report, random_contraction, spectral_norm};
use ckconv::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> ckconv::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (h, c, t) = (6, 2, 48);
    let w = random_contraction(&mut rng, h, 0.9)?;
    let u = Tensor::new(&[h, c], (0..h * c).map(|_| rng.gen_range(-1.0..1.0)).collect())?;
    let x = Tensor::new(&[1, c, t], (0..c * t).map(|_| rng.gen_range(-1.0..1.0)).collect())?;

    let unrolled = linear_rnn_unroll(&w, &u, &x, None)?;
    let kernel = linear_rnn_kernel(&w, &u, t)?;
    let conv = causal_conv_direct(&x, &kernel, None)?;
    println!("||W||_2 = {:.3}", spectral_norm(&w)?);
    println!("unrolled vs convolved: rel err {:.2e}", unrolled.rel_l2(&conv));

    // the kernel decays geometrically with the lag
    for tau in [0, 8, 16, 32, 47] {
        let norm: f64 = (0..h * c).map(|r| kernel.data()[r * t + tau].powi(2)).sum::<f64>().sqrt();
        println!("  |psi({tau:>2})| = {norm:.2e}");
    }

    let report = equivalence_report(50, 8, 64, 0.95, 1)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}
