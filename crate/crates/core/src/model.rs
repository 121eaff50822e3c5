//! Residual continuous-kernel convolutional network.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::conv::{CkconvLayer, Horizon};
use crate::data::SequenceBatch;
use crate::error::{Error, Result};
use crate::kernel_net::{KernelInit, KernelNetConfig, Nonlinearity, Resolution};
use crate::tensor::{ParamId, ParamStore, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    /// Linear readout of the last time step.
    SequenceToLabel,
    /// Pointwise readout at every step.
    SequenceToSequence,
}

/// Shape of the kernel networks; `omega0` comes from the model config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KernelSpec {
    pub hidden: usize,
    pub layers: usize,
    pub nonlinearity: Nonlinearity,
    pub init: KernelInit,
}

impl Default for KernelSpec {
    fn default() -> Self {
        Self {
            hidden: 32,
            layers: 3,
            nonlinearity: Nonlinearity::Sine,
            init: KernelInit::Siren,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CkcnnConfig {
    pub num_blocks: usize,
    pub hidden_channels: usize,
    pub omega0: f64,
    pub dropout: f64,
    pub input_dropout: f64,
    /// Backbone nonlinearity (the kernel nets have their own).
    pub nonlinearity: Nonlinearity,
    pub head: HeadKind,
    pub horizon: Horizon,
    pub kernel: KernelSpec,
    /// Append the observation mask as an extra input channel.
    pub mask_channel: bool,
}

impl Default for CkcnnConfig {
    fn default() -> Self {
        Self {
            num_blocks: 2,
            hidden_channels: 32,
            omega0: 30.0,
            dropout: 0.0,
            input_dropout: 0.0,
            nonlinearity: Nonlinearity::Relu,
            head: HeadKind::SequenceToLabel,
            horizon: Horizon::Global,
            kernel: KernelSpec::default(),
            mask_channel: false,
        }
    }
}

impl CkcnnConfig {
    pub fn kernel_config(&self) -> KernelNetConfig {
        KernelNetConfig {
            hidden: self.kernel.hidden,
            layers: self.kernel.layers,
            nonlinearity: self.kernel.nonlinearity,
            omega0: self.omega0,
            init: self.kernel.init,
        }
    }

    /// Checks every field and reports all offending keys at once.
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if self.num_blocks == 0 {
            bad.push("num_blocks (must be >= 1)".to_string());
        }
        if self.hidden_channels == 0 {
            bad.push("hidden_channels (must be >= 1)".to_string());
        }
        if !(1.0..=100.0).contains(&self.omega0) {
            bad.push(format!("omega0 ({} not in [1, 100])", self.omega0));
        }
        for (key, p) in [("dropout", self.dropout), ("input_dropout", self.input_dropout)] {
            if !(0.0..1.0).contains(&p) {
                bad.push(format!("{key} ({p} not in [0, 1))"));
            }
        }
        if self.kernel.hidden == 0 || self.kernel.layers < 2 {
            bad.push("kernel (needs hidden >= 1 and layers >= 2)".to_string());
        }
        if let Horizon::Fixed(0) = self.horizon {
            bad.push("horizon (fixed horizon must be >= 1)".to_string());
        }
        if !bad.is_empty() {
            return Err(Error::Config(format!("invalid model config: {}", bad.join(", "))));
        }
        if self.omega0 > 70.0 {
            log::warn!("omega0 = {} is above the range where good values are usually found (1..70)", self.omega0);
        }
        Ok(())
    }

    /// Analytic parameter count for a model with `in_channels` data channels.
    pub fn param_count(&self, in_channels: usize, out_dim: usize) -> usize {
        let kernel = self.kernel_config();
        let h = self.hidden_channels;
        let mut c_in = in_channels + usize::from(self.mask_channel);
        let mut total = 0;
        for _ in 0..self.num_blocks {
            let conv = |i: usize, o: usize| kernel.param_count(i * o) + o;
            total += conv(c_in, h) + conv(h, h) + 4 * h;
            if c_in != h {
                total += c_in * h + h;
            }
            c_in = h;
        }
        total + h * out_dim + out_dim
    }
}

/// Two CKConv → LayerNorm → nonlinearity → dropout stages plus a shortcut.
#[derive(Debug)]
pub struct Block {
    pub conv1: CkconvLayer,
    pub norm1: (ParamId, ParamId),
    pub conv2: CkconvLayer,
    pub norm2: (ParamId, ParamId),
    /// Pointwise projection when channel counts differ.
    pub shortcut: Option<(ParamId, ParamId)>,
}

/// Runtime options for a forward pass.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Runtime {
    pub training: bool,
    pub resolution: Resolution,
}

impl Runtime {
    pub fn train() -> Self {
        Self {
            training: true,
            resolution: Resolution::default(),
        }
    }

    pub fn eval() -> Self {
        Self {
            training: false,
            resolution: Resolution::default(),
        }
    }

    pub fn at(mut self, resolution: Resolution) -> Self {
        self.resolution = resolution;
        self
    }
}

#[derive(Debug)]
pub struct CkcnnModel {
    pub config: CkcnnConfig,
    pub in_channels: usize,
    pub out_dim: usize,
    pub train_max_len: usize,
    pub seed: u64,
    pub store: ParamStore,
    pub blocks: Vec<Block>,
    pub head: (ParamId, ParamId),
}

fn fan_in_uniform<R: Rng + ?Sized>(rng: &mut R, shape: &[usize], fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let n = shape.iter().product();
    Tensor::from_parts(shape.to_vec(), (0..n).map(|_| rng.gen_range(-bound..bound)).collect())
}

impl CkcnnModel {
    /// Builds and initializes a model deterministically from `seed`.
    /// `train_max_len` is the longest training sequence; its last step maps
    /// to kernel position 1.
    pub fn build(config: CkcnnConfig, in_channels: usize, out_dim: usize, train_max_len: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        if in_channels == 0 || out_dim == 0 {
            return Err(Error::Config("in_channels and out_dim must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let max_step = train_max_len.saturating_sub(1).max(1);
        let kernel = config.kernel_config();
        let h = config.hidden_channels;
        let mut c_in = in_channels + usize::from(config.mask_channel);
        let mut blocks = Vec::with_capacity(config.num_blocks);
        for i in 0..config.num_blocks {
            let p = format!("block{i}");
            let conv1 = CkconvLayer::new(&mut store, &format!("{p}/conv1"), c_in, h, max_step, config.horizon, kernel.clone(), &mut rng)?;
            let norm1 = (
                store.add_no_decay(format!("{p}/norm1/gain"), Tensor::ones(&[h])),
                store.add_no_decay(format!("{p}/norm1/bias"), Tensor::zeros(&[h])),
            );
            let conv2 = CkconvLayer::new(&mut store, &format!("{p}/conv2"), h, h, max_step, config.horizon, kernel.clone(), &mut rng)?;
            let norm2 = (
                store.add_no_decay(format!("{p}/norm2/gain"), Tensor::ones(&[h])),
                store.add_no_decay(format!("{p}/norm2/bias"), Tensor::zeros(&[h])),
            );
            let shortcut = (c_in != h).then(|| {
                let w = fan_in_uniform(&mut rng, &[h, c_in], c_in);
                let b = fan_in_uniform(&mut rng, &[h], c_in);
                (
                    store.add(format!("{p}/shortcut/weight"), w),
                    store.add_no_decay(format!("{p}/shortcut/bias"), b),
                )
            });
            blocks.push(Block { conv1, norm1, conv2, norm2, shortcut });
            c_in = h;
        }
        let w = fan_in_uniform(&mut rng, &[out_dim, h], h);
        let b = fan_in_uniform(&mut rng, &[out_dim], h);
        let head = (store.add("head/weight", w), store.add_no_decay("head/bias", b));

        let expected = config.param_count(in_channels, out_dim);
        if store.numel() != expected {
            return Err(Error::Contract(format!(
                "parameter count {} differs from analytic count {expected}",
                store.numel()
            )));
        }
        Ok(Self {
            config,
            in_channels,
            out_dim,
            train_max_len,
            seed,
            store,
            blocks,
            head,
        })
    }

    pub fn num_params(&self) -> usize {
        self.store.numel()
    }

    /// Largest unitary relative step seen in training.
    pub fn max_step(&self) -> usize {
        self.blocks[0].conv1.max_step
    }

    /// Model input `[B, C(+1), T]`: data channels weighted by the density when
    /// present, followed by the mask channel if configured.
    pub fn input_tensor(&self, batch: &SequenceBatch) -> Result<Tensor> {
        if batch.channels() != self.in_channels {
            return Err(Error::Dimension {
                op: "model input",
                lhs: batch.values.shape().to_vec(),
                rhs: vec![self.in_channels],
            });
        }
        if batch.is_empty() {
            return Err(Error::Data("empty sequence".into()));
        }
        let mut x = batch.values.clone();
        if let Some(d) = &batch.density {
            let t = batch.len();
            let c = batch.channels();
            for (i, v) in x.data_mut().iter_mut().enumerate() {
                let (b, ti) = (i / (c * t), i % t);
                *v *= d.data()[b * t + ti];
            }
        }
        if self.config.mask_channel {
            x = Tensor::concat_channels(&[&x, &batch.mask])?;
        }
        Ok(x)
    }

    /// One residual block on the tape.
    pub fn block_forward<R: Rng + ?Sized>(&self, tape: &mut Tape, i: usize, x: Var, rt: Runtime, rng: &mut R) -> Result<Var> {
        let blk = &self.blocks[i];
        let store = &self.store;
        let mut h = x;
        for (conv, (g, b)) in [(&blk.conv1, blk.norm1), (&blk.conv2, blk.norm2)] {
            h = conv.forward(tape, store, h, rt.resolution, rt.training)?;
            let (gv, bv) = (tape.param(store, g), tape.param(store, b));
            h = tape.layer_norm(h, gv, bv)?;
            h = self.config.nonlinearity.apply(tape, h);
            h = tape.dropout(h, self.config.dropout, rt.training, rng)?;
        }
        let skip = match blk.shortcut {
            Some((w, b)) => {
                let (wv, bv) = (tape.param(store, w), tape.param(store, b));
                tape.pointwise(x, wv, Some(bv))?
            }
            None => x,
        };
        tape.add(h, skip)
    }

    /// Predictions: `[B, out]` for sequence-to-label, `[B, out, T]` otherwise.
    pub fn forward<R: Rng + ?Sized>(&self, tape: &mut Tape, batch: &SequenceBatch, rt: Runtime, rng: &mut R) -> Result<Var> {
        let input = self.input_tensor(batch)?;
        let mut x = tape.constant(input);
        x = tape.dropout(x, self.config.input_dropout, rt.training, rng)?;
        for i in 0..self.blocks.len() {
            x = self.block_forward(tape, i, x, rt, rng)?;
        }
        let (w, b) = (tape.param(&self.store, self.head.0), tape.param(&self.store, self.head.1));
        match self.config.head {
            HeadKind::SequenceToLabel => {
                let last = tape.last_step(x)?;
                tape.linear(last, w, Some(b))
            }
            HeadKind::SequenceToSequence => tape.pointwise(x, w, Some(b)),
        }
    }

    /// Eval-mode predictions as a plain tensor.
    pub fn predict(&self, batch: &SequenceBatch, resolution: Resolution) -> Result<Tensor> {
        let mut tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let y = self.forward(&mut tape, batch, Runtime::eval().at(resolution), &mut rng)?;
        Ok(tape.value(y).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_adding_problem, Labels};

    #[test]
    fn analytic_counts() {
        let copy = CkcnnConfig {
            hidden_channels: 10,
            head: HeadKind::SequenceToSequence,
            ..Default::default()
        };
        assert_eq!(copy.param_count(1, 9), 15_515);
        let adding = CkcnnConfig {
            hidden_channels: 25,
            ..Default::default()
        };
        assert_eq!(adding.param_count(2, 1), 70_587);
        let m = CkcnnModel::build(adding, 2, 1, 100, 0).unwrap();
        assert_eq!(m.num_params(), 70_587);
    }

    #[test]
    fn invalid_config_lists_keys() {
        let cfg = CkcnnConfig {
            num_blocks: 0,
            omega0: 500.0,
            ..Default::default()
        };
        let msg = cfg.validate().unwrap_err().to_string();
        assert!(msg.contains("num_blocks") && msg.contains("omega0"), "{msg}");
    }

    #[test]
    fn smoke_and_eval_determinism() {
        let cfg = CkcnnConfig {
            num_blocks: 1,
            hidden_channels: 1,
            ..Default::default()
        };
        let m = CkcnnModel::build(cfg, 1, 1, 8, 3).unwrap();
        let batch = SequenceBatch::regular(Tensor::zeros(&[2, 1, 8]), Labels::None).unwrap();
        let y = m.predict(&batch, Resolution::default()).unwrap();
        assert_eq!(y.shape(), &[2, 1]);
        assert!(y.all_finite());
        assert_eq!(y, m.predict(&batch, Resolution::default()).unwrap());
    }

    #[test]
    fn any_length_runs() {
        let cfg = CkcnnConfig {
            hidden_channels: 4,
            ..Default::default()
        };
        let m = CkcnnModel::build(cfg, 2, 1, 20, 1).unwrap();
        for t in [2, 7, 20, 64] {
            let batch = gen_adding_problem(t, 2, 0).unwrap();
            assert_eq!(m.predict(&batch, Resolution::default()).unwrap().shape(), &[2, 1]);
        }
    }

    #[test]
    fn zero_block_is_shortcut() {
        let cfg = CkcnnConfig {
            num_blocks: 1,
            hidden_channels: 3,
            ..Default::default()
        };
        let mut m = CkcnnModel::build(cfg, 2, 1, 10, 5).unwrap();
        for conv in [&m.blocks[0].conv1, &m.blocks[0].conv2] {
            let last = *conv.kernel_net.layers.last().unwrap();
            let (g, b) = (last.g, last.b);
            m.store.value_mut(g).data_mut().fill(0.0);
            m.store.value_mut(b).data_mut().fill(0.0);
        }
        let batch = gen_adding_problem(10, 2, 1).unwrap();
        let mut tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = tape.constant(batch.values.clone());
        let y = m.block_forward(&mut tape, 0, x, Runtime::eval(), &mut rng).unwrap();
        let (w, b) = m.blocks[0].shortcut.unwrap();
        let (w, b) = (tape.constant(m.store.value(w).clone()), tape.constant(m.store.value(b).clone()));
        let s = tape.pointwise(x, w, Some(b)).unwrap();
        assert_eq!(tape.value(y), tape.value(s));
    }
}
