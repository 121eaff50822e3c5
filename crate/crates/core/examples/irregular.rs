//! Irregularly sampled inputs. A CKConv layer can be evaluated directly at
//! the observed time stamps, weighting each sample by its inverse density.
//! On a complete uniform grid this reproduces the regular convolution
//! exactly; with samples missing it stays close to the full-data response.
//!
//! cargo run --release --example irregular

use ckconv::conv::{irregular_conv, CkconvLayer, Horizon};
use ckconv::data::{random_drop, Labels, SequenceBatch};
use ckconv::harness::band_limited;
use ckconv::kernel_net::{KernelNetConfig, Resolution};
use ckconv::tensor::ParamStore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> ckconv::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut store = ParamStore::new();
    let t = 100;
    let layer = CkconvLayer::new(&mut store, "conv", 2, 3, t - 1, Horizon::Global, KernelNetConfig::sine(10.0), &mut rng)?;

    // smooth inputs: sums of sinusoids with at most 4 cycles over the window
    let batch = SequenceBatch::regular(band_limited(2, 2, t, 4, 1, 1), Labels::None)?.with_density()?;
    let regular = layer.forward_direct(&store, &batch.values, Resolution::default())?;
    let full = irregular_conv(&layer, &store, &batch)?;
    let same = full[0].data().iter().zip(regular.data()).all(|(a, b)| a.to_bits() == b.to_bits());
    println!("complete grid: irregular path bitwise equal to the regular one: {same}");

    for p in [0.1, 0.3, 0.5] {
        let dropped = random_drop(&batch, p, 2)?.with_density()?;
        let ys = irregular_conv(&layer, &store, &dropped)?;
        // compare at the last observed step of sample 0
        let observed: Vec<usize> = (0..t).filter(|&i| dropped.mask.at(&[0, 0, i]) == 1.0).collect();
        let last = *observed.last().expect("some samples survive");
        let n = observed.len();
        let err: f64 = (0..3).map(|o| (ys[0].at(&[o, n - 1]) - regular.at(&[0, o, last])).abs()).sum::<f64>()
            / (0..3).map(|o| regular.at(&[0, o, last]).abs()).sum::<f64>();
        println!("drop {:.0}%: kept {n}/{t} samples, relative deviation at step {last}: {err:.3}", p * 100.0);
    }
    Ok(())
}
