//! Train a CKCNN to recall ten digits after a delay of `T` blanks.
//!
//! cargo run --release --example copy_memory -- [seq_len] [epochs]

use ckconv::data::TokenEncoding;
use ckconv::harness::{train, TaskSpec, TrainConfig};
use ckconv::model::CkcnnConfig;

fn main() -> ckconv::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args: Vec<String> = std::env::args().skip(1).collect();
    let seq_len = args.first().and_then(|s| s.parse().ok()).unwrap_or(100);
    let epochs = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(60);

    let config = TrainConfig {
        epochs,
        task: TaskSpec::CopyMemory {
            seq_len,
            samples: 3200,
            encoding: TokenEncoding::Integer,
        },
        model: CkcnnConfig {
            hidden_channels: 10,
            omega0: 19.2,
            ..CkcnnConfig::default()
        },
        ..TrainConfig::default()
    };
    let out = train(&config)?;
    println!(
        "{} parameters, recalled-digit accuracy {:.2}% after {} steps",
        out.model.num_params(),
        100.0 * out.best_val_metric,
        out.steps
    );
    Ok(())
}
