//! Round-trip a dataset through CSV and train on it as a file-backed task.
//! Empty cells mark unobserved steps.
//!
//! cargo run --release --example csv_dataset

use ckconv::data::{gen_adding_problem, load_csv, random_drop, write_csv};
use ckconv::harness::{train, TaskSpec, TrainConfig};
use ckconv::model::CkcnnConfig;

fn main() -> ckconv::Result<()> {
    let dir = tempfile::tempdir()?;
    let train_path = dir.path().join("train.csv");
    let val_path = dir.path().join("val.csv");
    let data = random_drop(&gen_adding_problem(40, 320, 1)?, 0.2, 1)?;
    let schema = write_csv(&train_path, &data)?;
    write_csv(&val_path, &random_drop(&gen_adding_problem(40, 64, 2)?, 0.2, 2)?)?;

    let text = std::fs::read_to_string(&train_path)?;
    println!("{}", text.lines().take(4).collect::<Vec<_>>().join("\n"));
    let back = load_csv(&train_path, &schema)?;
    println!("read {} sequences of length {}, {:.0}% observed", back.batch_size(), back.len(), 100.0 * back.kept_fraction());

    let config = TrainConfig {
        epochs: 5,
        task: TaskSpec::Csv {
            train: train_path,
            validation: Some(val_path),
            schema,
            classes: 0,
        },
        model: CkcnnConfig {
            hidden_channels: 12,
            mask_channel: true,
            ..CkcnnConfig::default()
        },
        ..TrainConfig::default()
    };
    let out = train(&config)?;
    println!("best validation MSE {:.3e}", out.best_val_loss);
    Ok(())
}
