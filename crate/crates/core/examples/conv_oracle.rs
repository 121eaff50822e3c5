//! FFT causal convolution against the direct O(T·K) definition.
//!
//! cargo run --release --example conv_oracle

use std::time::Instant;

use ckconv::conv::{causal_conv_direct, causal_conv_fft};
use ckconv::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> ckconv::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    println!("{:>6} {:>6} {:>12} {:>10} {:>10}", "T", "K", "rel err", "direct", "fft");
    for t in [16, 128, 1024, 4096] {
        let (b, ci, co) = (2, 4, 4);
        let x = Tensor::new(&[b, ci, t], (0..b * ci * t).map(|_| rng.gen_range(-1.0..1.0)).collect())?;
        let k = Tensor::new(&[co, ci, t], (0..co * ci * t).map(|_| rng.gen_range(-1.0..1.0)).collect())?;

        let start = Instant::now();
        let direct = causal_conv_direct(&x, &k, None)?;
        let t_direct = start.elapsed();
        let start = Instant::now();
        let fft = causal_conv_fft(&x, &k, None)?;
        let t_fft = start.elapsed();

        println!(
            "{t:>6} {t:>6} {:>12.2e} {:>9.1?} {:>9.1?}",
            fft.rel_l2(&direct),
            t_direct,
            t_fft
        );
    }
    Ok(())
}
