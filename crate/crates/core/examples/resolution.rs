//! One CKConv layer, three sampling rates. The kernel is a function of
//! relative position, so the same weights serve the training grid, a grid
//! with every second sample, and a grid twice as fine.
//!
//! cargo run --release --example resolution

use ckconv::conv::{CkconvLayer, Horizon};
use ckconv::harness::{resample_report, ResampleConfig};
use ckconv::kernel_net::{KernelNetConfig, Resolution};
use ckconv::tensor::ParamStore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> ckconv::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut store = ParamStore::new();
    let layer = CkconvLayer::new(&mut store, "conv", 1, 1, 63, Horizon::Global, KernelNetConfig::sine(30.0), &mut rng)?;

    let full = layer.kernel_cached(&store, 64, Resolution::default())?;
    let half = layer.kernel_cached(&store, 32, Resolution::stride(2))?;
    let fine = layer.kernel_cached(&store, 127, Resolution::upsample(2))?;
    println!("kernel lengths: train {}, stride 2 {}, upsample 2 {}", full.shape()[2], half.shape()[2], fine.shape()[2]);
    println!("{:>5} {:>10} {:>10} {:>10}", "step", "train", "stride 2", "fine");
    for i in 0..6 {
        let step = 2 * i;
        println!(
            "{step:>5} {:>10.5} {:>10.5} {:>10.5}",
            full.data()[step],
            half.data()[i],
            fine.data()[2 * step]
        );
    }

    for train_steps in [0, 500] {
        let report = resample_report(&ResampleConfig {
            train_steps,
            ..ResampleConfig::default()
        })?;
        println!(
            "fitted for {train_steps:>3} steps: stride-2 rel err {:.2e}, upsample-2 rel err {:.2e}",
            report.stride2_rel_err, report.upsample2_rel_err
        );
    }
    Ok(())
}
