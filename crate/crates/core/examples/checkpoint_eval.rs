//! Train briefly, save a checkpoint, reload it and evaluate at other
//! sampling rates: every second step, twice as fine, and with 30% of the
//! steps dropped.
//!
//! cargo run --release --example checkpoint_eval

use ckconv::harness::{evaluate, train, Checkpoint, ResampleSpec, TaskSpec, TrainConfig};
use ckconv::model::CkcnnConfig;

fn main() -> ckconv::Result<()> {
    let dir = tempfile::tempdir()?;
    let config = TrainConfig {
        epochs: 20,
        lr: 3e-3,
        task: TaskSpec::Waves {
            seq_len: 64,
            samples: 640,
            classes: 4,
        },
        model: CkcnnConfig {
            hidden_channels: 8,
            omega0: 10.0,
            mask_channel: true,
            ..CkcnnConfig::default()
        },
        out_dir: Some(dir.path().to_path_buf()),
        deterministic: true,
        ..TrainConfig::default()
    };
    train(&config)?;
    let ckpt = Checkpoint::load(dir.path().join("best.ckpt.json"))?;
    println!("checkpoint from epoch {} (step {})", ckpt.epoch, ckpt.step);

    let specs = [
        ("training rate", ResampleSpec::default()),
        ("stride 2", ResampleSpec { stride: Some(2), ..Default::default() }),
        ("upsample 2", ResampleSpec { upsample: Some(2), ..Default::default() }),
        ("30% dropped", ResampleSpec { drop: Some(0.3), ..Default::default() }),
    ];
    for (name, spec) in specs {
        let r = evaluate(&ckpt, &spec)?;
        println!("{name:>14}: accuracy {:.3} on length {} (kept {:.0}%)", r.metric, r.seq_len, 100.0 * r.kept_fraction);
    }
    Ok(())
}
