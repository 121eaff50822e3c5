//! Sequence batches, synthetic task generators, resampling transforms and CSV I/O.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::conv::inverse_density;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Supervision attached to a batch.
#[derive(Clone, Debug, PartialEq)]
pub enum Labels {
    None,
    /// One class per sequence.
    Classes(Vec<usize>),
    /// One real vector per sequence, `[B, D]`.
    Values(Tensor),
    /// One class per step, row-major `(b, t)`.
    StepClasses(Vec<usize>),
    /// One real vector per step, `[B, D, T]`.
    StepValues(Tensor),
}

/// Batched multichannel sequences with an observation mask.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceBatch {
    /// `[B, C, T]`; zero wherever `mask` is zero.
    pub values: Tensor,
    /// `[B, 1, T]` with entries in {0, 1}.
    pub mask: Tensor,
    /// Time stamp of every column, per sample, strictly increasing.
    pub times: Vec<Vec<f64>>,
    pub labels: Labels,
    /// Optional `[B, 1, T]` inverse sample density.
    pub density: Option<Tensor>,
}

impl SequenceBatch {
    /// Fully observed batch on the unitary grid `0, 1, …, T−1`.
    pub fn regular(values: Tensor, labels: Labels) -> Result<Self> {
        let [b, _, t] = values.dims3("SequenceBatch")?;
        let batch = Self {
            values,
            mask: Tensor::ones(&[b, 1, t]),
            times: vec![(0..t).map(|i| i as f64).collect(); b],
            labels,
            density: None,
        };
        batch.validate()?;
        Ok(batch)
    }

    pub fn batch_size(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn channels(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn len(&self) -> usize {
        self.values.shape()[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self) -> Result<()> {
        let [b, _, t] = self.values.dims3("SequenceBatch")?;
        if self.mask.shape() != [b, 1, t] {
            return Err(Error::Data(format!("mask shape {:?} for values {:?}", self.mask.shape(), self.values.shape())));
        }
        if self.times.len() != b || self.times.iter().any(|ts| ts.len() != t) {
            return Err(Error::Data("one time stamp per column and sample required".into()));
        }
        if self.times.iter().any(|ts| ts.windows(2).any(|w| !(w[1] > w[0]))) {
            return Err(Error::Data("positions must be strictly increasing".into()));
        }
        if self.mask.data().iter().any(|&m| m != 0.0 && m != 1.0) {
            return Err(Error::Data("mask entries must be 0 or 1".into()));
        }
        if let Some(d) = &self.density {
            if d.shape() != [b, 1, t] {
                return Err(Error::Data("density must be [B, 1, T]".into()));
            }
        }
        let ok = match &self.labels {
            Labels::None => true,
            Labels::Classes(c) => c.len() == b,
            Labels::Values(v) => v.shape().len() == 2 && v.shape()[0] == b,
            Labels::StepClasses(c) => c.len() == b * t,
            Labels::StepValues(v) => v.shape().len() == 3 && v.shape()[0] == b && v.shape()[2] == t,
        };
        if !ok {
            return Err(Error::Data("labels do not match the batch shape".into()));
        }
        Ok(())
    }

    /// Time stamps of observed columns of sample `b`.
    pub fn positions(&self, b: usize) -> Vec<f64> {
        let t = self.len();
        (0..t)
            .filter(|&ti| self.mask.data()[b * t + ti] != 0.0)
            .map(|ti| self.times[b][ti])
            .collect()
    }

    /// Fraction of observed entries.
    pub fn kept_fraction(&self) -> f64 {
        let m = self.mask.data();
        if m.is_empty() {
            return 1.0;
        }
        m.iter().sum::<f64>() / m.len() as f64
    }

    /// Sub-batch of the given samples, in order.
    pub fn select(&self, idx: &[usize]) -> Self {
        let [_, c, t] = [self.batch_size(), self.channels(), self.len()];
        let rows = |x: &Tensor, width: usize| -> Tensor {
            let mut out = Vec::with_capacity(idx.len() * width);
            for &i in idx {
                out.extend_from_slice(&x.data()[i * width..(i + 1) * width]);
            }
            let mut shape = x.shape().to_vec();
            shape[0] = idx.len();
            Tensor::from_parts(shape, out)
        };
        let labels = match &self.labels {
            Labels::None => Labels::None,
            Labels::Classes(v) => Labels::Classes(idx.iter().map(|&i| v[i]).collect()),
            Labels::Values(v) => Labels::Values(rows(v, v.shape()[1])),
            Labels::StepClasses(v) => Labels::StepClasses(idx.iter().flat_map(|&i| v[i * t..(i + 1) * t].iter().copied()).collect()),
            Labels::StepValues(v) => Labels::StepValues(rows(v, v.shape()[1] * t)),
        };
        Self {
            values: rows(&self.values, c * t),
            mask: rows(&self.mask, t),
            times: idx.iter().map(|&i| self.times[i].clone()).collect(),
            labels,
            density: self.density.as_ref().map(|d| rows(d, t)),
        }
    }

    /// Splits off the last `fraction` of samples (at least one) as a second batch.
    pub fn split(&self, fraction: f64) -> (Self, Self) {
        let b = self.batch_size();
        let held = ((b as f64 * fraction).round() as usize).clamp(1, b.saturating_sub(1).max(1));
        let first: Vec<usize> = (0..b - held).collect();
        let second: Vec<usize> = (b - held..b).collect();
        (self.select(&first), self.select(&second))
    }

    /// Attaches the inverse sample density estimated from observed positions.
    pub fn with_density(mut self) -> Result<Self> {
        let (b, t) = (self.batch_size(), self.len());
        let mut d = vec![0.0; b * t];
        for bi in 0..b {
            let s = inverse_density(&self.positions(bi))?;
            let mut k = 0;
            for ti in 0..t {
                if self.mask.data()[bi * t + ti] != 0.0 {
                    d[bi * t + ti] = s[k];
                    k += 1;
                }
            }
        }
        self.density = Some(Tensor::from_parts(vec![b, 1, t], d));
        Ok(self)
    }
}

/// How copy-memory tokens are presented to the model.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenEncoding {
    /// One channel holding the raw digit.
    #[default]
    Integer,
    /// Ten indicator channels.
    OneHot,
}

impl TokenEncoding {
    pub fn channels(self) -> usize {
        match self {
            Self::Integer => 1,
            Self::OneHot => 10,
        }
    }
}

/// Classes predicted on the copy-memory task: digits 0…8 (9 only marks recall).
pub const COPY_CLASSES: usize = 9;
/// Number of digits to memorize and recall.
pub const COPY_DIGITS: usize = 10;

/// Copy-memory sequences of length `T + 20`: ten digits from {1…8}, `T − 1`
/// zeros, then eleven 9s. Targets are zero except the last ten steps, which
/// repeat the first ten digits.
pub fn gen_copy_memory(t: usize, batch: usize, seed: u64, encoding: TokenEncoding) -> Result<SequenceBatch> {
    if t == 0 {
        return Err(Error::Config("copy memory needs T >= 1".into()));
    }
    let len = t + 20;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ch = encoding.channels();
    let mut values = vec![0.0; batch * ch * len];
    let mut targets = vec![0usize; batch * len];
    for b in 0..batch {
        let mut tokens = vec![0usize; len];
        for (i, tok) in tokens.iter_mut().enumerate().take(COPY_DIGITS) {
            *tok = rng.gen_range(1..=8);
            targets[b * len + len - COPY_DIGITS + i] = *tok;
        }
        for tok in &mut tokens[len - 11..] {
            *tok = 9;
        }
        for (ti, &tok) in tokens.iter().enumerate() {
            match encoding {
                TokenEncoding::Integer => values[b * len + ti] = tok as f64,
                TokenEncoding::OneHot => values[(b * ch + tok) * len + ti] = 1.0,
            }
        }
    }
    SequenceBatch::regular(Tensor::from_parts(vec![batch, ch, len], values), Labels::StepClasses(targets))
}

/// Adding problem: channel 0 ~ U[0, 1], channel 1 marks one position in each
/// half of the sequence; the target is the sum of the marked values.
pub fn gen_adding_problem(t: usize, batch: usize, seed: u64) -> Result<SequenceBatch> {
    if t < 2 {
        return Err(Error::Config("adding problem needs T >= 2".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = vec![0.0; batch * 2 * t];
    let mut targets = Vec::with_capacity(batch);
    let half = t / 2;
    for b in 0..batch {
        let row = &mut values[b * 2 * t..(b + 1) * 2 * t];
        for v in &mut row[..t] {
            *v = rng.gen::<f64>();
        }
        let first = rng.gen_range(0..half);
        let second = rng.gen_range(half..t);
        row[t + first] = 1.0;
        row[t + second] = 1.0;
        targets.push(row[first] + row[second]);
    }
    SequenceBatch::regular(
        Tensor::from_parts(vec![batch, 2, t], values),
        Labels::Values(Tensor::from_parts(vec![batch, 1], targets)),
    )
}

/// Recomputes adding-problem targets as the sum over markers that survived
/// a random drop, so the task stays solvable from the observed data.
pub fn relabel_adding_observed(batch: &mut SequenceBatch) -> Result<()> {
    let [b, c, t] = batch.values.dims3("relabel_adding_observed")?;
    if c != 2 {
        return Err(Error::Data("adding problem batches have two channels".into()));
    }
    let v = batch.values.data();
    let targets: Vec<f64> = (0..b)
        .map(|bi| (0..t).filter(|&ti| v[(bi * 2 + 1) * t + ti] == 1.0).map(|ti| v[bi * 2 * t + ti]).sum())
        .collect();
    batch.labels = Labels::Values(Tensor::from_parts(vec![b, 1], targets));
    Ok(())
}

/// One-dimensional fitting targets, all scaled to [−1, 1].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    Gaussian,
    Step,
    Sawtooth { teeth: usize },
    Sine { cycles: usize },
    RandomNoise,
}

impl FromStr for TargetKind {
    type Err = Error;

    /// Accepts `gaussian`, `step`, `sawtooth[:teeth]`, `sine[:cycles]`, `random_noise`.
    fn from_str(s: &str) -> Result<Self> {
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (s, None),
        };
        let count = |default: usize| -> Result<usize> {
            match arg {
                None => Ok(default),
                Some(a) => a
                    .parse::<usize>()
                    .ok()
                    .filter(|&n| n > 0)
                    .ok_or_else(|| Error::Config(format!("bad count in target `{s}`"))),
            }
        };
        match name.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "gaussian" => Ok(Self::Gaussian),
            "step" => Ok(Self::Step),
            "sawtooth" => Ok(Self::Sawtooth { teeth: count(8)? }),
            "sine" => Ok(Self::Sine { cycles: count(4)? }),
            "random_noise" | "noise" => Ok(Self::RandomNoise),
            _ => Err(Error::Config(format!("unknown target kind `{s}`"))),
        }
    }
}

impl fmt::Display for TargetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Gaussian => write!(f, "gaussian"),
            Self::Step => write!(f, "step"),
            Self::Sawtooth { teeth } => write!(f, "sawtooth:{teeth}"),
            Self::Sine { cycles } => write!(f, "sine:{cycles}"),
            Self::RandomNoise => write!(f, "random_noise"),
        }
    }
}

pub fn gen_targets(kind: TargetKind, length: usize, seed: u64) -> Result<Vec<f64>> {
    if length < 2 {
        return Err(Error::Config("target length must be at least 2".into()));
    }
    let n = length as f64;
    Ok(match kind {
        TargetKind::Gaussian => (0..length)
            .map(|i| {
                let x = -1.0 + 2.0 * i as f64 / (n - 1.0);
                2.0 * (-x * x / (2.0 * 0.2 * 0.2)).exp() - 1.0
            })
            .collect(),
        TargetKind::Step => (0..length).map(|i| if i < length / 2 { -1.0 } else { 1.0 }).collect(),
        TargetKind::Sawtooth { teeth } => {
            let period = (length / teeth.max(1)).max(2);
            (0..length)
                .map(|i| -1.0 + 2.0 * (i % period) as f64 / (period - 1) as f64)
                .collect()
        }
        TargetKind::Sine { cycles } => (0..length)
            .map(|i| (2.0 * std::f64::consts::PI * cycles as f64 * i as f64 / n).sin())
            .collect(),
        TargetKind::RandomNoise => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..length).map(|_| rng.gen_range(-1.0..=1.0)).collect()
        }
    })
}

fn take_columns(x: &Tensor, keep: &[usize]) -> Tensor {
    let mut shape = x.shape().to_vec();
    let t = *shape.last().expect("sequence tensor");
    let mut out = Vec::with_capacity(x.numel() / t.max(1) * keep.len());
    for row in x.data().chunks(t) {
        out.extend(keep.iter().map(|&i| row[i]));
    }
    *shape.last_mut().expect("sequence tensor") = keep.len();
    Tensor::from_parts(shape, out)
}

/// Keeps columns `0, n, 2n, …` (`seq[::n]`). Time stamps keep their original
/// values, so kernels stay aligned with the training grid.
pub fn subsample(batch: &SequenceBatch, n: usize) -> Result<SequenceBatch> {
    if n == 0 {
        return Err(Error::Config("subsampling factor must be >= 1".into()));
    }
    let t = batch.len();
    let keep: Vec<usize> = (0..t).step_by(n).collect();
    let labels = match &batch.labels {
        Labels::StepClasses(v) => {
            Labels::StepClasses(v.chunks(t.max(1)).flat_map(|row| keep.iter().map(move |&i| row[i])).collect())
        }
        Labels::StepValues(v) => Labels::StepValues(take_columns(v, &keep)),
        other => other.clone(),
    };
    Ok(SequenceBatch {
        values: take_columns(&batch.values, &keep),
        mask: take_columns(&batch.mask, &keep),
        times: batch.times.iter().map(|ts| keep.iter().map(|&i| ts[i]).collect()).collect(),
        labels,
        density: batch.density.as_ref().map(|d| take_columns(d, &keep)),
    })
}

/// Drops each (sample, step) independently with probability `p`: the mask
/// goes to 0 and all channels are zeroed there.
pub fn random_drop(batch: &SequenceBatch, p: f64, seed: u64) -> Result<SequenceBatch> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Config(format!("drop rate {p} outside [0, 1)")));
    }
    let mut out = batch.clone();
    if p == 0.0 {
        return Ok(out);
    }
    let [b, c, t] = out.values.dims3("random_drop")?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for bi in 0..b {
        for ti in 0..t {
            if rng.gen::<f64>() < p {
                out.mask.data_mut()[bi * t + ti] = 0.0;
                for ci in 0..c {
                    out.values.data_mut()[(bi * c + ci) * t + ti] = 0.0;
                }
                if let Some(d) = out.density.as_mut() {
                    d.data_mut()[bi * t + ti] = 0.0;
                }
            }
        }
    }
    Ok(out)
}

/// How the `label` column of a CSV file is read.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelKind {
    #[default]
    None,
    /// Class index per sequence (first non-empty cell of the group).
    Class,
    /// Real value per sequence.
    Value,
    StepClass,
    StepValue,
}

/// Column layout of a sequence CSV file. Reserved columns: `label`, `mask`,
/// `t`, and the optional group column; everything else is a channel unless
/// `channels` lists them explicitly.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub channels: Option<Vec<String>>,
    pub group_column: Option<String>,
    pub label: LabelKind,
}

struct Group {
    times: Vec<f64>,
    values: Vec<Vec<f64>>,
    mask: Vec<f64>,
    labels: Vec<Option<f64>>,
}

fn parse_cell(cell: &str, line: usize, column: &str) -> Result<Option<f64>> {
    let cell = cell.trim();
    if cell.is_empty() {
        return Ok(None);
    }
    match cell.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(Some(v)),
        _ => Err(Error::Parse {
            line,
            msg: format!("column `{column}`: `{cell}` is not a finite number"),
        }),
    }
}

fn as_class(v: f64, line: usize) -> Result<usize> {
    if v >= 0.0 && v.fract() == 0.0 {
        Ok(v as usize)
    } else {
        Err(Error::Parse {
            line,
            msg: format!("label {v} is not a class index"),
        })
    }
}

/// Reads sequences from CSV: one per file, or one per value of the group
/// column. Empty channel cells are masked out. Shorter groups are padded at
/// the end with masked steps.
pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<SequenceBatch> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path.as_ref()).map_err(csv_error)?;
    let headers: Vec<String> = reader.headers().map_err(csv_error)?.iter().map(str::to_string).collect();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let reserved = ["label", "mask", "t"];
    let channel_names: Vec<String> = match &schema.channels {
        Some(names) => names.clone(),
        None => headers
            .iter()
            .filter(|h| !reserved.contains(&h.as_str()) && Some(h.as_str()) != schema.group_column.as_deref())
            .cloned()
            .collect(),
    };
    if channel_names.is_empty() {
        return Err(Error::Schema("no channel columns".into()));
    }
    let channel_cols = channel_names
        .iter()
        .map(|n| col(n).ok_or_else(|| Error::Schema(format!("missing column `{n}`"))))
        .collect::<Result<Vec<_>>>()?;
    let group_col = match &schema.group_column {
        Some(g) => Some(col(g).ok_or_else(|| Error::Schema(format!("missing group column `{g}`")))?),
        None => None,
    };
    let label_col = match schema.label {
        LabelKind::None => None,
        _ => Some(col("label").ok_or_else(|| Error::Schema("missing column `label`".into()))?),
    };
    let (mask_col, t_col) = (col("mask"), col("t"));

    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, Group> = HashMap::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| Error::Parse { line, msg: e.to_string() })?;
        let get = |c: usize| record.get(c).unwrap_or("");
        let key = group_col.map_or_else(String::new, |c| get(c).to_string());
        let group = groups.entry(key.clone()).or_insert_with(|| {
            order.push(key);
            Group {
                times: Vec::new(),
                values: vec![Vec::new(); channel_cols.len()],
                mask: Vec::new(),
                labels: Vec::new(),
            }
        });
        let mut observed = match mask_col {
            Some(c) => match parse_cell(get(c), line, "mask")? {
                Some(m) if m == 0.0 || m == 1.0 => m == 1.0,
                Some(m) => return Err(Error::Parse { line, msg: format!("mask value {m}") }),
                None => true,
            },
            None => true,
        };
        let cells = channel_cols
            .iter()
            .zip(&channel_names)
            .map(|(&c, name)| parse_cell(get(c), line, name))
            .collect::<Result<Vec<_>>>()?;
        if cells.iter().any(Option::is_none) {
            observed = false;
        }
        for (dst, cell) in group.values.iter_mut().zip(cells) {
            dst.push(if observed { cell.unwrap_or(0.0) } else { 0.0 });
        }
        group.mask.push(if observed { 1.0 } else { 0.0 });
        let t = match t_col {
            Some(c) => parse_cell(get(c), line, "t")?.ok_or_else(|| Error::Parse {
                line,
                msg: "empty time stamp".into(),
            })?,
            None => group.times.len() as f64,
        };
        if group.times.last().is_some_and(|&last| !(t > last)) {
            return Err(Error::Parse {
                line,
                msg: "time stamps must be strictly increasing".into(),
            });
        }
        group.times.push(t);
        group.labels.push(match label_col {
            Some(c) => parse_cell(get(c), line, "label")?,
            None => None,
        });
    }
    if order.is_empty() {
        return Err(Error::Data("CSV file has no rows".into()));
    }

    let b = order.len();
    let c = channel_cols.len();
    let t = order.iter().map(|k| groups[k].mask.len()).max().unwrap_or(0);
    let mut values = vec![0.0; b * c * t];
    let mut mask = vec![0.0; b * t];
    let mut times = Vec::with_capacity(b);
    let mut seq_labels = Vec::with_capacity(b);
    let mut step_labels = vec![0.0; b * t];
    for (bi, key) in order.iter().enumerate() {
        let g = &groups[key];
        let n = g.mask.len();
        for ci in 0..c {
            values[(bi * c + ci) * t..(bi * c + ci) * t + n].copy_from_slice(&g.values[ci]);
        }
        mask[bi * t..bi * t + n].copy_from_slice(&g.mask);
        let mut ts = g.times.clone();
        let last = ts.last().copied().unwrap_or(-1.0);
        ts.extend((1..=t - n).map(|k| last + k as f64));
        times.push(ts);
        match schema.label {
            LabelKind::Class | LabelKind::Value => {
                let v = g.labels.iter().flatten().next().copied().ok_or_else(|| {
                    Error::Schema(format!("sequence `{key}` has no label"))
                })?;
                seq_labels.push(v);
            }
            LabelKind::StepClass | LabelKind::StepValue => {
                for (ti, l) in g.labels.iter().enumerate() {
                    step_labels[bi * t + ti] = l.ok_or_else(|| Error::Schema(format!("sequence `{key}` misses a step label")))?;
                }
            }
            LabelKind::None => {}
        }
    }
    let labels = match schema.label {
        LabelKind::None => Labels::None,
        LabelKind::Class => Labels::Classes(seq_labels.iter().map(|&v| as_class(v, 0)).collect::<Result<_>>()?),
        LabelKind::Value => Labels::Values(Tensor::from_parts(vec![b, 1], seq_labels)),
        LabelKind::StepClass => Labels::StepClasses(step_labels.iter().map(|&v| as_class(v, 0)).collect::<Result<_>>()?),
        LabelKind::StepValue => Labels::StepValues(Tensor::from_parts(vec![b, 1, t], step_labels)),
    };
    let batch = SequenceBatch {
        values: Tensor::from_parts(vec![b, c, t], values),
        mask: Tensor::from_parts(vec![b, 1, t], mask),
        times,
        labels,
        density: None,
    };
    batch.validate()?;
    Ok(batch)
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Data(format!("{other:?}")),
    }
}

/// Writes a batch in the layout read by [`load_csv`] with `group_column = "id"`.
/// Returns the schema needed to read it back.
pub fn write_csv(path: impl AsRef<Path>, batch: &SequenceBatch) -> Result<CsvSchema> {
    let [b, c, t] = batch.values.dims3("write_csv")?;
    let label = match &batch.labels {
        Labels::None => LabelKind::None,
        Labels::Classes(_) => LabelKind::Class,
        Labels::Values(v) if v.shape()[1] == 1 => LabelKind::Value,
        Labels::StepClasses(_) => LabelKind::StepClass,
        Labels::StepValues(v) if v.shape()[1] == 1 => LabelKind::StepValue,
        _ => return Err(Error::Schema("only scalar labels can be written to CSV".into())),
    };
    let channels: Vec<String> = (0..c).map(|i| format!("x{i}")).collect();
    let mut w = csv::Writer::from_path(path.as_ref()).map_err(csv_error)?;
    let mut header = vec!["id".to_string(), "t".to_string()];
    header.extend(channels.iter().cloned());
    header.push("mask".into());
    if label != LabelKind::None {
        header.push("label".into());
    }
    w.write_record(&header).map_err(csv_error)?;
    for bi in 0..b {
        for ti in 0..t {
            let mut row = vec![bi.to_string(), batch.times[bi][ti].to_string()];
            row.extend((0..c).map(|ci| batch.values.data()[(bi * c + ci) * t + ti].to_string()));
            row.push(batch.mask.data()[bi * t + ti].to_string());
            match &batch.labels {
                Labels::None => {}
                Labels::Classes(v) => row.push(if ti == 0 { v[bi].to_string() } else { String::new() }),
                Labels::Values(v) => row.push(if ti == 0 { v.data()[bi].to_string() } else { String::new() }),
                Labels::StepClasses(v) => row.push(v[bi * t + ti].to_string()),
                Labels::StepValues(v) => row.push(v.data()[bi * t + ti].to_string()),
            }
            w.write_record(&row).map_err(csv_error)?;
        }
    }
    w.flush()?;
    Ok(CsvSchema {
        channels: Some(channels),
        group_column: Some("id".into()),
        label,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn copy_memory_layout() {
        let batch = gen_copy_memory(5, 3, 1, TokenEncoding::Integer).unwrap();
        assert_eq!(batch.len(), 25);
        let Labels::StepClasses(targets) = &batch.labels else { panic!() };
        for b in 0..3 {
            let row: Vec<f64> = (0..25).map(|t| batch.values.at(&[b, 0, t])).collect();
            assert!(row[..10].iter().all(|&d| (1.0..=8.0).contains(&d)));
            assert!(row[10..14].iter().all(|&d| d == 0.0));
            assert!(row[14..].iter().all(|&d| d == 9.0));
            let tgt = &targets[b * 25..(b + 1) * 25];
            assert_eq!(tgt.iter().filter(|&&c| c != 0).count(), 10);
            for i in 0..10 {
                assert_eq!(tgt[15 + i] as f64, row[i]);
            }
        }
        let onehot = gen_copy_memory(5, 3, 1, TokenEncoding::OneHot).unwrap();
        assert_eq!(onehot.channels(), 10);
        assert_eq!(onehot.labels, batch.labels);
    }

    #[test]
    fn adding_problem_targets_in_range() {
        let batch = gen_adding_problem(10, 50, 4).unwrap();
        let Labels::Values(y) = &batch.labels else { panic!() };
        for b in 0..50 {
            let markers: Vec<usize> = (0..10).filter(|&t| batch.values.at(&[b, 1, t]) == 1.0).collect();
            assert_eq!(markers.len(), 2);
            assert!(markers[0] < 5 && markers[1] >= 5);
            assert!((0.0..=2.0).contains(&y.data()[b]));
        }
        assert_eq!(gen_adding_problem(10, 50, 4).unwrap(), batch);
    }

    #[test]
    fn targets() {
        let step = gen_targets(TargetKind::Step, 6, 0).unwrap();
        assert_eq!(step, vec![-1.0, -1.0, -1.0, 1.0, 1.0, 1.0]);
        let saw = gen_targets(TargetKind::Sawtooth { teeth: 8 }, 256, 0).unwrap();
        assert_eq!(saw[0], -1.0);
        assert_eq!(saw[31], 1.0);
        assert_eq!(saw[32], -1.0);
        for kind in ["gaussian", "sine", "random_noise", "sawtooth:4"] {
            let v = gen_targets(kind.parse().unwrap(), 100, 3).unwrap();
            assert!(v.iter().all(|x| (-1.0..=1.0).contains(x)), "{kind}");
        }
        assert!(matches!("triangle".parse::<TargetKind>(), Err(Error::Config(_))));
    }

    #[test]
    fn subsample_keeps_original_steps() {
        let batch = gen_adding_problem(182, 1, 0).unwrap();
        let s = subsample(&batch, 4).unwrap();
        assert_eq!(s.len(), 46);
        assert_eq!(s.times[0][..3], [0.0, 4.0, 8.0]);
        assert_eq!(subsample(&batch, 1).unwrap(), batch);
        let twice = subsample(&subsample(&batch, 2).unwrap(), 3).unwrap();
        assert_eq!(twice.times, subsample(&batch, 6).unwrap().times);
    }

    #[test]
    fn drop_contract() {
        let batch = gen_adding_problem(200, 4, 0).unwrap();
        assert_eq!(random_drop(&batch, 0.0, 1).unwrap(), batch);
        let d = random_drop(&batch, 0.5, 1).unwrap();
        for b in 0..4 {
            for t in 0..200 {
                if d.mask.at(&[b, 0, t]) == 0.0 {
                    assert_eq!(d.values.at(&[b, 0, t]), 0.0);
                    assert_eq!(d.values.at(&[b, 1, t]), 0.0);
                }
            }
        }
        assert!(random_drop(&batch, 1.0, 1).is_err());
    }

    #[test]
    fn csv_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.csv");
        let batch = random_drop(&gen_adding_problem(12, 3, 9).unwrap(), 0.3, 2).unwrap();
        let schema = write_csv(&path, &batch).unwrap();
        let back = load_csv(&path, &schema).unwrap();
        assert_eq!(back.mask, batch.mask);
        assert!(back.values.rel_l2(&batch.values) <= 1e-12);
        assert_eq!(back.times, batch.times);

        std::fs::write(&path, "a,b\n1,2\n3,\n5,6\n").unwrap();
        let b = load_csv(&path, &CsvSchema::default()).unwrap();
        assert_eq!(b.len(), 3);
        assert_eq!(b.mask.data(), &[1.0, 0.0, 1.0]);

        std::fs::write(&path, "a,b\n1,2\n3,x\n").unwrap();
        assert!(matches!(load_csv(&path, &CsvSchema::default()), Err(Error::Parse { line: 3, .. })));
        let schema = CsvSchema {
            label: LabelKind::Class,
            ..CsvSchema::default()
        };
        std::fs::write(&path, "a,b\n1,2\n").unwrap();
        assert!(matches!(load_csv(&path, &schema), Err(Error::Schema(_))));
    }
}
