use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use ckconv::data::{write_csv, TargetKind, TokenEncoding};
use ckconv::harness::{
    equivalence_report, evaluate, fit_kernel, resample_report, sweep_omega0, train, Checkpoint, FitKernelConfig,
    ResampleConfig, ResampleSpec, SweepConfig, TaskSpec, TrainConfig,
};
use ckconv::kernel_net::{KernelInit, KernelNetConfig, Nonlinearity};
use ckconv::{Error, Result};

#[derive(Parser)]
#[command(name = "ckconv", version, about = "Continuous kernel convolutional networks")]
struct Cli {
    /// Log level filter (error, warn, info, debug).
    #[arg(long, global = true, default_value = "info")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write metrics, checkpoints and a config echo.
    Train(TrainArgs),
    /// Evaluate a checkpoint, optionally at another sampling rate or with drops.
    Evaluate(EvalArgs),
    /// Fit a standalone kernel network to a 1-D target.
    FitKernel(FitArgs),
    /// Write a synthetic dataset as CSV.
    Generate(GenerateArgs),
    /// Report how layer responses transfer across sampling rates.
    ResampleTest(ResampleArgs),
    /// Compare a linear recurrence with convolution by its kernel.
    EquivalenceTest(EquivalenceArgs),
    /// Coarse-to-fine grid search over omega0.
    Sweep(SweepArgs),
}

#[derive(Args, Clone)]
struct TrainArgs {
    /// JSON training config; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
    /// adding, copy or waves.
    #[arg(long)]
    task: Option<String>,
    #[arg(long)]
    seq_len: Option<usize>,
    /// Training sequences per epoch.
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    classes: Option<usize>,
    /// Copy-memory input encoding: integer or one_hot.
    #[arg(long)]
    encoding: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    decay_factor: Option<f64>,
    #[arg(long)]
    blocks: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    omega0: Option<f64>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    input_dropout: Option<f64>,
    /// Random drop rate applied to training and validation data.
    #[arg(long)]
    drop: Option<f64>,
    #[arg(long)]
    mask_channel: bool,
    #[arg(long)]
    density: bool,
    #[arg(long)]
    success: Option<f64>,
    #[arg(long)]
    max_steps: Option<usize>,
    #[arg(long)]
    max_seconds: Option<f64>,
    /// Bit-reproducible run (no wall-clock values in the logs).
    #[arg(long)]
    deterministic: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    stride: Option<usize>,
    #[arg(long)]
    upsample: Option<usize>,
    #[arg(long)]
    drop: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct FitArgs {
    /// gaussian, step, sawtooth[:teeth], sine[:cycles] or random_noise.
    #[arg(long, default_value = "sawtooth:8")]
    target: String,
    #[arg(long, default_value = "sine")]
    nonlinearity: String,
    /// siren, zero_bias or uniform_knots (defaults to siren for sine, zero_bias otherwise).
    #[arg(long)]
    init: Option<String>,
    #[arg(long, default_value_t = 30.0)]
    omega0: f64,
    #[arg(long, default_value_t = 32)]
    hidden: usize,
    #[arg(long, default_value_t = 3)]
    layers: usize,
    #[arg(long, default_value_t = 256)]
    length: usize,
    #[arg(long, default_value_t = 2000)]
    steps: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct GenerateArgs {
    /// adding, copy or waves.
    #[arg(long)]
    task: String,
    #[arg(long, default_value_t = 100)]
    seq_len: usize,
    #[arg(long, default_value_t = 100)]
    samples: usize,
    #[arg(long, default_value_t = 4)]
    classes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.0)]
    drop: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ResampleArgs {
    #[arg(long, default_value_t = 256)]
    seq_len: usize,
    #[arg(long, default_value_t = 30.0)]
    omega0: f64,
    #[arg(long, default_value_t = 8)]
    max_cycles: usize,
    #[arg(long, default_value_t = 0)]
    train_steps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct EquivalenceArgs {
    #[arg(long, default_value_t = 50)]
    cases: usize,
    #[arg(long, default_value_t = 8)]
    hidden: usize,
    #[arg(long, default_value_t = 64)]
    seq_len: usize,
    #[arg(long, default_value_t = 0.95)]
    rho: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    train: TrainArgs,
    #[arg(long, default_value_t = 1.0)]
    lo: f64,
    #[arg(long, default_value_t = 100.0)]
    hi: f64,
    #[arg(long, default_value_t = 5)]
    points: usize,
    #[arg(long, default_value_t = 2)]
    rounds: usize,
}

fn parse_task(name: &str, seq_len: usize, samples: usize, classes: usize, encoding: TokenEncoding) -> Result<TaskSpec> {
    Ok(match name {
        "adding" | "adding_problem" => TaskSpec::AddingProblem { seq_len, samples },
        "copy" | "copy_memory" => TaskSpec::CopyMemory {
            seq_len,
            samples,
            encoding,
        },
        "waves" => TaskSpec::Waves {
            seq_len,
            samples,
            classes,
        },
        other => return Err(Error::Config(format!("unknown task `{other}` (adding, copy, waves)"))),
    })
}

fn parse_encoding(s: &str) -> Result<TokenEncoding> {
    match s {
        "integer" => Ok(TokenEncoding::Integer),
        "one_hot" | "onehot" => Ok(TokenEncoding::OneHot),
        other => Err(Error::Config(format!("unknown encoding `{other}`"))),
    }
}

fn resolve_train(a: &TrainArgs) -> Result<TrainConfig> {
    let mut cfg = match &a.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        }
        None => TrainConfig::default(),
    };
    cfg.seed = a.seed;
    cfg.out_dir = Some(a.out_dir.clone());
    let task_flags = a.task.is_some() || a.seq_len.is_some() || a.samples.is_some() || a.classes.is_some() || a.encoding.is_some();
    if task_flags {
        let (name, seq_len, samples, classes, encoding) = match &cfg.task {
            TaskSpec::AddingProblem { seq_len, samples } => ("adding", *seq_len, *samples, 4, TokenEncoding::default()),
            TaskSpec::CopyMemory { seq_len, samples, encoding } => ("copy", *seq_len, *samples, 4, *encoding),
            TaskSpec::Waves { seq_len, samples, classes } => ("waves", *seq_len, *samples, *classes, TokenEncoding::default()),
            TaskSpec::Csv { .. } => return Err(Error::Config("task flags cannot modify a CSV task".into())),
        };
        let encoding = a.encoding.as_deref().map(parse_encoding).transpose()?.unwrap_or(encoding);
        cfg.task = parse_task(
            a.task.as_deref().unwrap_or(name),
            a.seq_len.unwrap_or(seq_len),
            a.samples.unwrap_or(samples),
            a.classes.unwrap_or(classes),
            encoding,
        )?;
    }
    macro_rules! set {
        ($($flag:ident => $($field:ident).+),* $(,)?) => {
            $(if let Some(v) = a.$flag { cfg.$($field).+ = v; })*
        };
    }
    set!(
        epochs => epochs,
        batch_size => batch_size,
        lr => lr,
        weight_decay => weight_decay,
        patience => scheduler.patience,
        decay_factor => scheduler.decay_factor,
        blocks => model.num_blocks,
        hidden => model.hidden_channels,
        omega0 => model.omega0,
        dropout => model.dropout,
        input_dropout => model.input_dropout,
        drop => drop,
    );
    if a.success.is_some() {
        cfg.success = a.success;
    }
    if a.max_steps.is_some() {
        cfg.max_steps = a.max_steps;
    }
    if a.max_seconds.is_some() {
        cfg.max_seconds = a.max_seconds;
    }
    cfg.model.mask_channel |= a.mask_channel;
    cfg.density |= a.density;
    cfg.deterministic |= a.deterministic;
    cfg.validate()?;
    Ok(cfg)
}

fn emit<T: Serialize>(value: &T, out: Option<(&Path, &str)>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    println!("{text}");
    if let Some((dir, name)) = out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(name), text)?;
    }
    Ok(())
}

fn echo<T: Serialize>(dir: Option<&Path>, value: &T) -> Result<()> {
    if let Some(dir) = dir {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("config.json"), serde_json::to_string_pretty(value)?)?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(a) => {
            let cfg = resolve_train(&a)?;
            let out = train(&cfg)?;
            let summary = serde_json::json!({
                "params": out.model.num_params(),
                "epochs": out.records.len(),
                "steps": out.steps,
                "best_epoch": out.best_epoch,
                "best_val_loss": out.best_val_loss,
                "best_val_metric": out.best_val_metric,
                "succeeded": out.succeeded,
            });
            emit(&summary, Some((&a.out_dir, "summary.json")))
        }
        Command::Evaluate(a) => {
            let ckpt = Checkpoint::load(&a.checkpoint)?;
            let spec = ResampleSpec {
                stride: a.stride,
                upsample: a.upsample,
                drop: a.drop,
                seed: a.seed,
            };
            echo(a.out_dir.as_deref(), &spec)?;
            let report = evaluate(&ckpt, &spec)?;
            emit(&report, a.out_dir.as_deref().map(|d| (d, "eval.json")))
        }
        Command::FitKernel(a) => {
            let nonlinearity: Nonlinearity = a.nonlinearity.parse()?;
            let init = match a.init.as_deref() {
                Some("siren") => KernelInit::Siren,
                Some("zero_bias") => KernelInit::ZeroBias,
                Some("uniform_knots") => KernelInit::UniformKnots,
                Some(other) => return Err(Error::Config(format!("unknown init `{other}`"))),
                None if nonlinearity == Nonlinearity::Sine => KernelInit::Siren,
                None => KernelInit::ZeroBias,
            };
            let cfg = FitKernelConfig {
                target: a.target.parse::<TargetKind>()?,
                length: a.length,
                steps: a.steps,
                lr: a.lr,
                kernel: KernelNetConfig {
                    hidden: a.hidden,
                    layers: a.layers,
                    nonlinearity,
                    omega0: a.omega0,
                    init,
                },
                seed: a.seed,
                stop_below: None,
            };
            echo(a.out_dir.as_deref(), &cfg)?;
            let report = fit_kernel(&cfg)?;
            if let Some(dir) = a.out_dir.as_deref() {
                report.write_history(dir.join("mse.jsonl"))?;
                report.write_curve(dir.join("curve.csv"))?;
            }
            let summary = serde_json::json!({
                "target": cfg.target.to_string(),
                "steps": report.steps,
                "final_mse": report.final_mse,
                "best_mse": report.best_mse,
            });
            emit(&summary, a.out_dir.as_deref().map(|d| (d, "summary.json")))
        }
        Command::Generate(a) => {
            let task = parse_task(&a.task, a.seq_len, a.samples, a.classes, TokenEncoding::Integer)?;
            task.validate()?;
            let data = task.train_data(a.seed, 0)?;
            let data = task.drop(&data, a.drop, a.seed)?;
            write_csv(&a.out, &data)?;
            emit(
                &serde_json::json!({
                    "path": a.out,
                    "sequences": data.batch_size(),
                    "length": data.len(),
                    "channels": data.channels(),
                    "kept_fraction": data.kept_fraction(),
                }),
                None,
            )
        }
        Command::ResampleTest(a) => {
            let cfg = ResampleConfig {
                seq_len: a.seq_len,
                omega0: a.omega0,
                max_cycles: a.max_cycles,
                train_steps: a.train_steps,
                seed: a.seed,
                ..Default::default()
            };
            echo(a.out_dir.as_deref(), &cfg)?;
            let report = resample_report(&cfg)?;
            emit(&report, a.out_dir.as_deref().map(|d| (d, "resample.json")))
        }
        Command::EquivalenceTest(a) => {
            let report = equivalence_report(a.cases, a.hidden, a.seq_len, a.rho, a.seed)?;
            emit(&report, a.out_dir.as_deref().map(|d| (d, "equivalence.json")))
        }
        Command::Sweep(a) => {
            let cfg = SweepConfig {
                base: resolve_train(&a.train)?,
                lo: a.lo,
                hi: a.hi,
                points: a.points,
                rounds: a.rounds,
            };
            echo(Some(&a.train.out_dir), &cfg)?;
            let points = sweep_omega0(&cfg)?;
            emit(&points, Some((&a.train.out_dir, "sweep.json")))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(&cli.log)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
