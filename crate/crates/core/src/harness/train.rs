use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::task::{derive_seed, MetricKind, TaskSpec};
use crate::data::{subsample, SequenceBatch};
use crate::error::{Error, Result};
use crate::kernel_net::Resolution;
use crate::model::{CkcnnConfig, CkcnnModel, Runtime};
use crate::tensor::{Adam, NamedParams, Tape};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SchedulerConfig {
    pub patience: usize,
    pub decay_factor: f64,
    pub min_delta: f64,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        Self {
            patience: 20,
            decay_factor: 5.0,
            min_delta: 1e-5,
        }
    }
}

/// Divides the learning rate by `decay_factor` once the monitored value has
/// not improved by more than `min_delta` for `patience` consecutive epochs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlateauScheduler {
    pub config: SchedulerConfig,
    pub lr: f64,
    pub best: f64,
    pub bad_epochs: usize,
}

impl PlateauScheduler {
    pub fn new(config: SchedulerConfig, lr: f64) -> Result<Self> {
        if !(config.decay_factor > 1.0) || config.patience == 0 {
            return Err(Error::Config("scheduler needs decay_factor > 1 and patience >= 1".into()));
        }
        Ok(Self {
            config,
            lr,
            best: f64::INFINITY,
            bad_epochs: 0,
        })
    }

    /// Feeds one epoch's value (lower is better) and returns the learning rate
    /// for the next epoch.
    pub fn step(&mut self, value: f64) -> f64 {
        if value < self.best - self.config.min_delta {
            self.best = value;
            self.bad_epochs = 0;
        } else {
            self.bad_epochs += 1;
            if self.bad_epochs >= self.config.patience {
                self.lr /= self.config.decay_factor;
                self.bad_epochs = 0;
            }
        }
        self.lr
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub scheduler: SchedulerConfig,
    pub seed: u64,
    pub task: TaskSpec,
    pub model: CkcnnConfig,
    /// Fraction of (sample, step) entries dropped from training and validation data.
    pub drop: f64,
    /// Weight observed values by their inverse sample density.
    pub density: bool,
    /// Stop once validation reaches this value (MSE at most / accuracy at
    /// least). Defaults: 1e-4 for MSE tasks, 1.0 for accuracy tasks.
    pub success: Option<f64>,
    pub early_stop: bool,
    /// Cap on optimizer steps across all epochs.
    pub max_steps: Option<usize>,
    /// Wall-clock budget in seconds; not reproducible, so ignored when
    /// `deterministic` is set.
    pub max_seconds: Option<f64>,
    pub out_dir: Option<PathBuf>,
    /// Bit-reproducible run: single-threaded, no wall-clock fields in the logs.
    pub deterministic: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 32,
            lr: 1e-3,
            weight_decay: 0.0,
            scheduler: SchedulerConfig::default(),
            seed: 0,
            task: TaskSpec::AddingProblem {
                seq_len: 100,
                samples: 3200,
            },
            model: CkcnnConfig::default(),
            drop: 0.0,
            density: false,
            success: None,
            early_stop: true,
            max_steps: None,
            max_seconds: None,
            out_dir: None,
            deterministic: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if self.epochs == 0 {
            bad.push("epochs");
        }
        if self.batch_size == 0 {
            bad.push("batch_size");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            bad.push("lr");
        }
        if !(self.weight_decay >= 0.0) {
            bad.push("weight_decay");
        }
        if !(0.0..1.0).contains(&self.drop) {
            bad.push("drop");
        }
        if !(self.scheduler.decay_factor > 1.0) || self.scheduler.patience == 0 {
            bad.push("scheduler");
        }
        if !bad.is_empty() {
            return Err(Error::Config(format!("invalid training config: {}", bad.join(", "))));
        }
        self.task.validate()?;
        self.model_config().validate()
    }

    /// Model config with the head implied by the task.
    pub fn model_config(&self) -> CkcnnConfig {
        CkcnnConfig {
            head: self.task.head(),
            ..self.model.clone()
        }
    }

    pub fn success_threshold(&self) -> f64 {
        self.success.unwrap_or(match self.task.metric() {
            MetricKind::Mse => 1e-4,
            MetricKind::Accuracy => 1.0,
        })
    }

    fn succeeded(&self, val_loss: f64, val_metric: f64) -> bool {
        match self.task.metric() {
            MetricKind::Mse => val_loss <= self.success_threshold(),
            MetricKind::Accuracy => val_metric >= self.success_threshold(),
        }
    }

    /// Data preparation shared by training and validation: drop, then density.
    fn prepare(&self, batch: SequenceBatch, drop_seed: u64) -> Result<SequenceBatch> {
        let b = self.task.drop(&batch, self.drop, drop_seed)?;
        if self.density {
            b.with_density()
        } else {
            Ok(b)
        }
    }

    pub fn validation_data(&self) -> Result<SequenceBatch> {
        let val = self.task.validation_data(self.seed)?;
        self.prepare(val, derive_seed(self.seed, u64::MAX))
    }

    pub fn build_model(&self) -> Result<CkcnnModel> {
        CkcnnModel::build(
            self.model_config(),
            self.task.in_channels()?,
            self.task.out_dim(),
            self.task.train_len()?,
            self.seed,
        )
    }
}

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub step: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_metric: f64,
    pub lr: f64,
    /// Seconds since the start of training; null in deterministic runs.
    pub wall_time: Option<f64>,
}

pub struct TrainOutcome {
    /// Model with the best validation parameters restored.
    pub model: CkcnnModel,
    pub records: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub best_val_metric: f64,
    pub steps: usize,
    pub succeeded: bool,
}

/// Mean loss and task metric of `model` on `batch` in eval mode.
pub fn evaluate_model(
    model: &CkcnnModel,
    task: &TaskSpec,
    batch: &SequenceBatch,
    resolution: Resolution,
    chunk: usize,
) -> Result<(f64, f64)> {
    let n = batch.batch_size();
    let mut loss = 0.0;
    let mut metric = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let idx: Vec<usize> = (0..n).collect();
    for part in idx.chunks(chunk.max(1)) {
        let sub = batch.select(part);
        let mut tape = Tape::new();
        let pred = model.forward(&mut tape, &sub, Runtime::eval().at(resolution), &mut rng)?;
        let l = task.loss(&mut tape, pred, &sub)?;
        let w = part.len() as f64 / n as f64;
        loss += w * tape.value(l).item();
        metric += w * task.score(tape.value(pred), &sub)?;
    }
    Ok((loss, metric))
}

fn better(kind: MetricKind, loss: f64, metric: f64, best_loss: f64, best_metric: f64) -> bool {
    match kind {
        MetricKind::Mse => loss < best_loss,
        MetricKind::Accuracy => metric > best_metric || (metric == best_metric && loss < best_loss),
    }
}

/// Trains a model as configured. When `out_dir` is set, writes `config.json`
/// (the resolved config), `metrics.jsonl`, `best.ckpt.json`, `last.ckpt.json`
/// and, on divergence, `last_good.ckpt.json`.
pub fn train(config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let start = Instant::now();
    let out_dir = config.out_dir.as_deref();
    let mut log = match out_dir {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            fs::write(dir.join("config.json"), serde_json::to_string_pretty(config)?)?;
            Some(BufWriter::new(File::create(dir.join("metrics.jsonl"))?))
        }
        None => None,
    };

    let mut model = config.build_model()?;
    log::info!("{} model with {} parameters", config.task.name(), model.num_params());
    let val = config.validation_data()?;
    let mut adam = Adam::new(&model.store, config.lr);
    adam.weight_decay = config.weight_decay;
    let mut sched = PlateauScheduler::new(config.scheduler.clone(), config.lr)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 0xD0D0));
    let kind = config.task.metric();

    let mut records = Vec::new();
    let mut best = (f64::INFINITY, f64::NEG_INFINITY, 0usize);
    let mut best_params = model.store.to_named();
    let mut good = best_params.clone();
    let mut steps = 0usize;
    let mut succeeded = false;
    let over_time = |start: &Instant| !config.deterministic && config.max_seconds.is_some_and(|s| start.elapsed().as_secs_f64() >= s);

    'epochs: for epoch in 1..=config.epochs {
        let data = config.task.train_data(config.seed, epoch)?;
        let data = config.prepare(data, derive_seed(config.seed, 1_000_000 + epoch as u64))?;
        let mut order: Vec<usize> = (0..data.batch_size()).collect();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        let mut out_of_budget = false;
        for part in order.chunks(config.batch_size) {
            let batch = data.select(part);
            let mut tape = Tape::new();
            let loss = model
                .forward(&mut tape, &batch, Runtime::train(), &mut rng)
                .and_then(|pred| config.task.loss(&mut tape, pred, &batch));
            let loss = match loss {
                Ok(l) if tape.value(l).item().is_finite() => l,
                Ok(_) => return Err(diverged(config, &model, &good, &adam, epoch, steps, Error::Divergence { param: "loss".into() })),
                Err(e) if e.exit_code() == 4 => return Err(diverged(config, &model, &good, &adam, epoch, steps, e)),
                Err(e) => return Err(e),
            };
            let lv = tape.value(loss).item();
            // these parameters produced a finite loss
            good = model.store.to_named();
            tape.backward(loss)?;
            model.store.zero_grad();
            tape.accumulate_param_grads(&mut model.store);
            if let Err(e) = adam.step(&mut model.store) {
                return Err(diverged(config, &model, &good, &adam, epoch, steps, e));
            }
            loss_sum += lv * part.len() as f64;
            seen += part.len();
            steps += 1;
            if config.max_steps.is_some_and(|m| steps >= m) || over_time(&start) {
                out_of_budget = true;
                break;
            }
        }

        let (val_loss, val_metric) = match evaluate_model(&model, &config.task, &val, Resolution::default(), config.batch_size.max(64)) {
            Ok((l, _)) if !l.is_finite() => {
                let e = Error::Divergence { param: "validation loss".into() };
                return Err(diverged(config, &model, &good, &adam, epoch, steps, e));
            }
            Err(e) if e.exit_code() == 4 => return Err(diverged(config, &model, &good, &adam, epoch, steps, e)),
            other => other?,
        };
        let lr = sched.step(val_loss);
        adam.lr = lr;
        let record = EpochRecord {
            epoch,
            step: steps,
            train_loss: loss_sum / seen.max(1) as f64,
            val_loss,
            val_metric,
            lr,
            wall_time: (!config.deterministic).then(|| start.elapsed().as_secs_f64()),
        };
        log::info!(
            "epoch {epoch} step {steps}: train {:.3e} val {:.3e} metric {:.5} lr {:.1e}",
            record.train_loss,
            val_loss,
            val_metric,
            lr
        );
        if let Some(w) = log.as_mut() {
            serde_json::to_writer(&mut *w, &record)?;
            w.write_all(b"\n")?;
            w.flush()?;
        }
        records.push(record);

        if better(kind, val_loss, val_metric, best.0, best.1) {
            best = (val_loss, val_metric, epoch);
            best_params = model.store.to_named();
            if let Some(dir) = out_dir {
                Checkpoint::capture(config, &model, Some(&adam), epoch, steps).save(dir.join("best.ckpt.json"))?;
            }
        }
        if config.early_stop && config.succeeded(val_loss, val_metric) {
            succeeded = true;
            break 'epochs;
        }
        if out_of_budget {
            break;
        }
    }

    if let Some(dir) = out_dir {
        let last = records.last().map_or(0, |r| r.epoch);
        Checkpoint::capture(config, &model, Some(&adam), last, steps).save(dir.join("last.ckpt.json"))?;
    }
    model.store.load_named(&best_params)?;
    Ok(TrainOutcome {
        model,
        records,
        best_epoch: best.2,
        best_val_loss: best.0,
        best_val_metric: best.1,
        steps,
        succeeded: succeeded || config.succeeded(best.0, best.1),
    })
}

/// Saves `good` (the last parameters that produced a finite loss) as
/// `last_good.ckpt.json` and passes the error through.
fn diverged(config: &TrainConfig, model: &CkcnnModel, good: &NamedParams, adam: &Adam, epoch: usize, steps: usize, err: Error) -> Error {
    log::error!("training diverged at epoch {epoch}, step {steps}: {err}");
    if let Some(dir) = config.out_dir.as_deref() {
        let path = dir.join("last_good.ckpt.json");
        let mut ckpt = Checkpoint::capture(config, model, Some(adam), epoch, steps);
        ckpt.params = good.clone();
        if let Err(e) = ckpt.save(&path) {
            log::error!("could not save {}: {e}", path.display());
        }
    }
    err
}

/// Test-time resampling of the validation data.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ResampleSpec {
    /// Keep every `stride`-th step.
    pub stride: Option<usize>,
    /// Regenerate data this many times more densely (band-limited tasks only).
    pub upsample: Option<usize>,
    /// Random drop rate, overriding the training one.
    pub drop: Option<f64>,
    pub seed: Option<u64>,
}

impl ResampleSpec {
    pub fn resolution(&self) -> Resolution {
        Resolution {
            stride: self.stride.unwrap_or(1),
            upsample: self.upsample.unwrap_or(1),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: String,
    pub metric_kind: MetricKind,
    pub loss: f64,
    pub metric: f64,
    pub samples: usize,
    pub seq_len: usize,
    pub stride: usize,
    pub upsample: usize,
    pub kept_fraction: f64,
}

/// Evaluates a checkpoint on its task's validation data, resampled as requested.
pub fn evaluate(checkpoint: &Checkpoint, spec: &ResampleSpec) -> Result<EvalReport> {
    let model = checkpoint.restore()?;
    let cfg = &checkpoint.config;
    let res = spec.resolution();
    res.validate()?;
    let seed = spec.seed.unwrap_or(cfg.seed);
    let mut val = cfg.task.validation_at_rate(seed, res.upsample)?;
    if res.stride > 1 {
        val = subsample(&val, res.stride)?;
    }
    let p = spec.drop.unwrap_or(cfg.drop);
    val = cfg.task.drop(&val, p, derive_seed(seed, u64::MAX))?;
    if cfg.density {
        val = val.with_density()?;
    }
    let (loss, metric) = evaluate_model(&model, &cfg.task, &val, res, cfg.batch_size.max(64))?;
    Ok(EvalReport {
        task: cfg.task.name().into(),
        metric_kind: cfg.task.metric(),
        loss,
        metric,
        samples: val.batch_size(),
        seq_len: val.len(),
        stride: res.stride,
        upsample: res.upsample,
        kept_fraction: val.kept_fraction(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub base: TrainConfig,
    pub lo: f64,
    pub hi: f64,
    /// Grid points per round.
    pub points: usize,
    /// Each round narrows the interval to the neighbours of the best point.
    pub rounds: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            base: TrainConfig::default(),
            lo: 1.0,
            hi: 100.0,
            points: 5,
            rounds: 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub round: usize,
    pub omega0: f64,
    pub val_loss: f64,
    pub val_metric: f64,
}

/// Coarse-to-fine grid search of ω0 over `[lo, hi]`.
pub fn sweep_omega0(config: &SweepConfig) -> Result<Vec<SweepPoint>> {
    if config.points < 2 || config.rounds == 0 || !(config.lo >= 1.0 && config.hi <= 100.0 && config.lo < config.hi) {
        return Err(Error::Config("sweep needs points >= 2, rounds >= 1 and 1 <= lo < hi <= 100".into()));
    }
    let kind = config.base.task.metric();
    let mut results: Vec<SweepPoint> = Vec::new();
    let (mut lo, mut hi) = (config.lo, config.hi);
    for round in 0..config.rounds {
        let grid: Vec<f64> = (0..config.points)
            .map(|i| lo + (hi - lo) * i as f64 / (config.points - 1) as f64)
            .collect();
        let mut round_pts = Vec::new();
        for &omega0 in &grid {
            let mut cfg = config.base.clone();
            cfg.model.omega0 = omega0;
            cfg.out_dir = config.base.out_dir.as_ref().map(|d| d.join(format!("r{round}_w{omega0:.3}")));
            let out = train(&cfg)?;
            let p = SweepPoint {
                round,
                omega0,
                val_loss: out.best_val_loss,
                val_metric: out.best_val_metric,
            };
            log::info!("sweep round {round}: omega0 {omega0:.3} -> loss {:.3e} metric {:.4}", p.val_loss, p.val_metric);
            round_pts.push(p);
        }
        let best = round_pts
            .iter()
            .enumerate()
            .fold(0, |bi, (i, p)| {
                let b = &round_pts[bi];
                if better(kind, p.val_loss, p.val_metric, b.val_loss, b.val_metric) {
                    i
                } else {
                    bi
                }
            });
        lo = grid[best.saturating_sub(1)];
        hi = grid[(best + 1).min(grid.len() - 1)];
        results.extend(round_pts);
    }
    Ok(results)
}

/// Reads a JSONL metrics log.
pub fn read_metrics(path: &Path) -> Result<Vec<EpochRecord>> {
    fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}
