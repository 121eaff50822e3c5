use std::fs;
use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{gen_targets, TargetKind};
use crate::error::{Error, Result};
use crate::kernel_net::{make_grid, KernelNet, KernelNetConfig, Resolution};
use crate::tensor::{Adam, ParamStore, Tape, Tensor};

/// Fit a standalone kernel network to a 1-D target sampled on `length`
/// uniformly spaced positions in [−1, 1].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitKernelConfig {
    pub target: TargetKind,
    pub length: usize,
    pub steps: usize,
    pub lr: f64,
    pub kernel: KernelNetConfig,
    pub seed: u64,
    /// Stop early once the MSE falls below this value.
    pub stop_below: Option<f64>,
}

impl Default for FitKernelConfig {
    fn default() -> Self {
        Self {
            target: TargetKind::Sawtooth { teeth: 8 },
            length: 256,
            steps: 2000,
            lr: 1e-3,
            kernel: KernelNetConfig::default(),
            seed: 0,
            stop_below: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub target: TargetKind,
    pub steps: usize,
    pub final_mse: f64,
    pub best_mse: f64,
    /// MSE before each optimizer step.
    pub history: Vec<f64>,
    pub positions: Vec<f64>,
    pub target_values: Vec<f64>,
    pub fitted: Vec<f64>,
}

impl FitReport {
    /// Per-step MSE as JSON lines.
    pub fn write_history(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(fs::File::create(path)?);
        for (step, mse) in self.history.iter().enumerate() {
            writeln!(f, "{}", serde_json::json!({ "step": step, "mse": mse }))?;
        }
        f.flush()?;
        Ok(())
    }

    /// Final curve as CSV: `position,target,fitted`.
    pub fn write_curve(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path.as_ref()).map_err(|e| Error::Data(e.to_string()))?;
        w.write_record(["position", "target", "fitted"]).map_err(|e| Error::Data(e.to_string()))?;
        for ((p, t), y) in self.positions.iter().zip(&self.target_values).zip(&self.fitted) {
            w.write_record([p.to_string(), t.to_string(), y.to_string()])
                .map_err(|e| Error::Data(e.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn fit_kernel(config: &FitKernelConfig) -> Result<FitReport> {
    if config.steps == 0 || !(config.lr > 0.0) {
        return Err(Error::Config("fit-kernel needs steps >= 1 and lr > 0".into()));
    }
    let target_values = gen_targets(config.target, config.length, config.seed)?;
    let grid = make_grid(config.length - 1, config.length, Resolution::default())?;
    let positions = grid.positions().to_vec();
    let target = Tensor::new(&[config.length, 1], target_values.clone())?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut store = ParamStore::new();
    let net = KernelNet::new(&mut store, "fit", 1, 1, config.kernel.clone(), &mut rng)?;
    let mut adam = Adam::new(&store, config.lr);
    let mut history = Vec::with_capacity(config.steps);
    for _ in 0..config.steps {
        let mut tape = Tape::new();
        let y = net.forward(&mut tape, &store, &positions)?;
        let loss = tape.mse(y, &target)?;
        let mse = tape.value(loss).item();
        history.push(mse);
        if config.stop_below.is_some_and(|s| mse < s) {
            break;
        }
        tape.backward(loss)?;
        store.zero_grad();
        tape.accumulate_param_grads(&mut store);
        adam.step(&mut store)?;
    }
    let fitted = net.eval_kernel(&store, &positions)?.into_data();
    let final_mse = fitted.iter().zip(&target_values).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / config.length as f64;
    if !final_mse.is_finite() {
        return Err(Error::KernelDivergence {
            omega0: config.kernel.omega0,
        });
    }
    let best_mse = history.iter().copied().fold(final_mse, f64::min);
    Ok(FitReport {
        target: config.target,
        steps: history.len(),
        final_mse,
        best_mse,
        history,
        positions,
        target_values,
        fitted,
    })
}
