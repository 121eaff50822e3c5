//! Training tasks: data sources, losses and metrics.

use std::f64::consts::PI;
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{
    gen_adding_problem, gen_copy_memory, load_csv, random_drop, relabel_adding_observed, CsvSchema, Labels,
    SequenceBatch, TokenEncoding, COPY_CLASSES, COPY_DIGITS,
};
use crate::error::{Error, Result};
use crate::model::HeadKind;
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaskSpec {
    /// Sum of two marked values; scored by MSE.
    AddingProblem {
        seq_len: usize,
        /// Training sequences generated per epoch.
        samples: usize,
    },
    /// Recall ten digits after a delay; scored by accuracy on the recalled digits.
    CopyMemory {
        seq_len: usize,
        samples: usize,
        #[serde(default)]
        encoding: TokenEncoding,
    },
    /// Classify which of `classes` sinusoid frequencies (1, 2, … cycles) a
    /// sequence carries; random phase and amplitude. Band-limited, so it can be
    /// regenerated at any sampling rate.
    Waves {
        seq_len: usize,
        samples: usize,
        classes: usize,
    },
    /// Sequences read from CSV files.
    Csv {
        train: PathBuf,
        validation: Option<PathBuf>,
        #[serde(default)]
        schema: CsvSchema,
        /// Number of classes for class labels; ignored for real-valued labels.
        #[serde(default)]
        classes: usize,
    },
}

/// What the metric measures.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    /// Mean squared error, lower is better.
    Mse,
    /// Fraction correct, higher is better.
    Accuracy,
}

impl TaskSpec {
    pub fn name(&self) -> &'static str {
        match self {
            Self::AddingProblem { .. } => "adding_problem",
            Self::CopyMemory { .. } => "copy_memory",
            Self::Waves { .. } => "waves",
            Self::Csv { .. } => "csv",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = match self {
            Self::AddingProblem { seq_len, samples } => *seq_len < 2 || *samples == 0,
            Self::CopyMemory { seq_len, samples, .. } => *seq_len == 0 || *samples == 0,
            Self::Waves { seq_len, samples, classes } => *seq_len < 2 || *samples == 0 || *classes < 2,
            Self::Csv { .. } => false,
        };
        if bad {
            return Err(Error::Config(format!("invalid {} task parameters", self.name())));
        }
        Ok(())
    }

    pub fn metric(&self) -> MetricKind {
        match self {
            Self::AddingProblem { .. } => MetricKind::Mse,
            Self::CopyMemory { .. } | Self::Waves { .. } => MetricKind::Accuracy,
            Self::Csv { classes, .. } => {
                if *classes > 0 {
                    MetricKind::Accuracy
                } else {
                    MetricKind::Mse
                }
            }
        }
    }

    pub fn head(&self) -> HeadKind {
        match self {
            Self::CopyMemory { .. } => HeadKind::SequenceToSequence,
            Self::Csv { schema, .. } => match schema.label {
                crate::data::LabelKind::StepClass | crate::data::LabelKind::StepValue => HeadKind::SequenceToSequence,
                _ => HeadKind::SequenceToLabel,
            },
            _ => HeadKind::SequenceToLabel,
        }
    }

    pub fn out_dim(&self) -> usize {
        match self {
            Self::AddingProblem { .. } => 1,
            Self::CopyMemory { .. } => COPY_CLASSES,
            Self::Waves { classes, .. } => *classes,
            Self::Csv { classes, .. } => (*classes).max(1),
        }
    }

    /// Sequence length seen in training (before any drop).
    pub fn train_len(&self) -> Result<usize> {
        Ok(match self {
            Self::AddingProblem { seq_len, .. } | Self::Waves { seq_len, .. } => *seq_len,
            Self::CopyMemory { seq_len, .. } => seq_len + 20,
            Self::Csv { .. } => self.validation_data(0)?.len(),
        })
    }

    pub fn in_channels(&self) -> Result<usize> {
        Ok(match self {
            Self::AddingProblem { .. } => 2,
            Self::CopyMemory { encoding, .. } => encoding.channels(),
            Self::Waves { .. } => 1,
            Self::Csv { .. } => self.validation_data(0)?.channels(),
        })
    }

    /// Training data for one epoch. Synthetic tasks draw fresh sequences every
    /// epoch from a seed derived from `(seed, epoch)`.
    pub fn train_data(&self, seed: u64, epoch: usize) -> Result<SequenceBatch> {
        let s = derive_seed(seed, 1 + epoch as u64);
        match self {
            Self::AddingProblem { seq_len, samples } => gen_adding_problem(*seq_len, *samples, s),
            Self::CopyMemory { seq_len, samples, encoding } => gen_copy_memory(*seq_len, *samples, s, *encoding),
            Self::Waves { seq_len, samples, classes } => gen_waves(*seq_len, *samples, *classes, 1, s),
            Self::Csv { train, schema, .. } => load_csv(train, schema),
        }
    }

    /// Held-out data: 10% of the per-epoch sample count, fixed per seed.
    pub fn validation_data(&self, seed: u64) -> Result<SequenceBatch> {
        self.validation_at_rate(seed, 1)
    }

    /// Validation data sampled `upsample` times more densely than in training.
    /// Only band-limited synthetic tasks support `upsample > 1`.
    pub fn validation_at_rate(&self, seed: u64, upsample: usize) -> Result<SequenceBatch> {
        let s = derive_seed(seed, 0);
        let val = |n: usize| (n / 10).max(1);
        if upsample > 1 && !matches!(self, Self::Waves { .. }) {
            return Err(Error::Config(format!("{} data cannot be regenerated at a finer rate", self.name())));
        }
        match self {
            Self::AddingProblem { seq_len, samples } => gen_adding_problem(*seq_len, val(*samples), s),
            Self::CopyMemory { seq_len, samples, encoding } => gen_copy_memory(*seq_len, val(*samples), s, *encoding),
            Self::Waves { seq_len, samples, classes } => gen_waves(*seq_len, val(*samples), *classes, upsample, s),
            Self::Csv { train, validation, schema, .. } => {
                let all = load_csv(validation.as_ref().unwrap_or(train), schema)?;
                if validation.is_some() {
                    Ok(all)
                } else {
                    Ok(all.split(0.1).1)
                }
            }
        }
    }

    /// Applies a random drop and fixes up labels that depend on the dropped data.
    pub fn drop(&self, batch: &SequenceBatch, p: f64, seed: u64) -> Result<SequenceBatch> {
        if p == 0.0 {
            return Ok(batch.clone());
        }
        let mut out = random_drop(batch, p, seed)?;
        if matches!(self, Self::AddingProblem { .. }) {
            relabel_adding_observed(&mut out)?;
        }
        Ok(out)
    }

    /// Mean loss of `pred` on `batch` (MSE or cross-entropy).
    pub fn loss(&self, tape: &mut Tape, pred: Var, batch: &SequenceBatch) -> Result<Var> {
        match &batch.labels {
            Labels::Values(y) => tape.mse(pred, y),
            Labels::StepValues(y) => tape.mse(pred, y),
            Labels::Classes(c) => tape.cross_entropy(pred, c),
            Labels::StepClasses(c) => {
                let rows = tape.to_rows(pred)?;
                tape.cross_entropy(rows, c)
            }
            Labels::None => Err(Error::Data("batch has no labels".into())),
        }
    }

    /// Task metric on eval-mode predictions. Copy memory scores the last ten
    /// steps only.
    pub fn score(&self, pred: &Tensor, batch: &SequenceBatch) -> Result<f64> {
        match (&batch.labels, self.metric()) {
            (Labels::Values(y), _) | (Labels::StepValues(y), _) => {
                if pred.numel() != y.numel() {
                    return Err(Error::Dimension {
                        op: "score",
                        lhs: pred.shape().to_vec(),
                        rhs: y.shape().to_vec(),
                    });
                }
                Ok(pred.data().iter().zip(y.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / y.numel() as f64)
            }
            (Labels::Classes(c), _) => {
                let [n, k] = pred.dims2("score")?;
                let hits = (0..n).filter(|&i| argmax(&pred.data()[i * k..(i + 1) * k]) == c[i]).count();
                Ok(hits as f64 / n.max(1) as f64)
            }
            (Labels::StepClasses(c), _) => {
                let [b, k, t] = pred.dims3("score")?;
                let from = if matches!(self, Self::CopyMemory { .. }) { t.saturating_sub(COPY_DIGITS) } else { 0 };
                let mut hits = 0;
                let mut total = 0;
                for bi in 0..b {
                    for ti in from..t {
                        let logits: Vec<f64> = (0..k).map(|ki| pred.data()[(bi * k + ki) * t + ti]).collect();
                        hits += usize::from(argmax(&logits) == c[bi * t + ti]);
                        total += 1;
                    }
                }
                Ok(hits as f64 / total.max(1) as f64)
            }
            (Labels::None, _) => Err(Error::Data("batch has no labels".into())),
        }
    }
}

fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &x)| if x > bv { (i, x) } else { (bi, bv) })
        .0
}

/// Mixes a base seed with a stream index (splitmix64 finalizer).
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Sinusoid classification data: class `k` has `k + 1` cycles over the
/// training span, random phase and amplitude in [0.5, 1]. With `upsample = r`
/// the same signals are sampled at steps `0, 1/r, 2/r, …`.
pub fn gen_waves(seq_len: usize, batch: usize, classes: usize, upsample: usize, seed: u64) -> Result<SequenceBatch> {
    let r = upsample.max(1);
    let len = (seq_len - 1) * r + 1;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = Vec::with_capacity(batch * len);
    let mut labels = Vec::with_capacity(batch);
    for _ in 0..batch {
        let class = rng.gen_range(0..classes);
        let phase = rng.gen_range(0.0..2.0 * PI);
        let amp = rng.gen_range(0.5..1.0);
        let freq = (class + 1) as f64 / seq_len as f64;
        values.extend((0..len).map(|i| amp * (2.0 * PI * freq * i as f64 / r as f64 + phase).sin()));
        labels.push(class);
    }
    let mut out = SequenceBatch::regular(Tensor::new(&[batch, 1, len], values)?, Labels::Classes(labels))?;
    out.times = vec![(0..len).map(|i| i as f64 / r as f64).collect(); batch];
    Ok(out)
}
