//! Fit kernel networks to 1-D targets: Sine (SIREN) against ReLU with
//! zero-bias and uniform-knot initializations.
//!
//! cargo run --release --example fit_kernel -- [target] [steps] [out_dir]
//! target: gaussian, step, sawtooth[:teeth], sine[:cycles], random_noise

use std::path::PathBuf;

use ckconv::harness::{fit_kernel, FitKernelConfig};
use ckconv::kernel_net::{KernelInit, KernelNetConfig, Nonlinearity};

fn main() -> ckconv::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let target = args.first().map_or("sawtooth:8", String::as_str).parse()?;
    let steps = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(2000);
    let out_dir = args.get(2).map(PathBuf::from);

    let nets = [
        ("sine", KernelNetConfig::sine(30.0)),
        ("relu", KernelNetConfig::piecewise(Nonlinearity::Relu, KernelInit::ZeroBias)),
        ("relu+knots", KernelNetConfig::piecewise(Nonlinearity::Relu, KernelInit::UniformKnots)),
        ("swish", KernelNetConfig::piecewise(Nonlinearity::Swish, KernelInit::ZeroBias)),
    ];
    println!("target {target}, {steps} Adam steps, 256 samples");
    for (name, kernel) in nets {
        let report = fit_kernel(&FitKernelConfig {
            target,
            steps,
            kernel,
            ..FitKernelConfig::default()
        })?;
        println!("{name:>12}: final MSE {:.3e}", report.final_mse);
        if let Some(dir) = &out_dir {
            std::fs::create_dir_all(dir)?;
            report.write_curve(dir.join(format!("{name}.csv")))?;
            report.write_history(dir.join(format!("{name}.jsonl")))?;
        }
    }
    Ok(())
}
