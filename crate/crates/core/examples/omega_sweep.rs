//! Coarse-to-fine search over the SIREN frequency ω0 on a short task.
//!
//! cargo run --release --example omega_sweep

use ckconv::harness::{sweep_omega0, SweepConfig, TaskSpec, TrainConfig};
use ckconv::model::CkcnnConfig;

fn main() -> ckconv::Result<()> {
    let base = TrainConfig {
        epochs: 3,
        task: TaskSpec::AddingProblem { seq_len: 30, samples: 320 },
        model: CkcnnConfig {
            hidden_channels: 8,
            ..CkcnnConfig::default()
        },
        deterministic: true,
        ..TrainConfig::default()
    };
    let points = sweep_omega0(&SweepConfig {
        base,
        lo: 1.0,
        hi: 100.0,
        points: 4,
        rounds: 2,
    })?;
    for p in &points {
        println!("round {} omega0 {:>7.2}: val loss {:.3e}", p.round, p.omega0, p.val_loss);
    }
    Ok(())
}
