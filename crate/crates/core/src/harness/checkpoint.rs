use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::train::TrainConfig;
use crate::error::{Error, Result};
use crate::model::CkcnnModel;
use crate::tensor::{Adam, NamedParams};

const FORMAT: u32 = 1;

/// Everything needed to rebuild and resume a model. Stored as JSON; floats
/// round-trip exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: u32,
    pub config: TrainConfig,
    pub in_channels: usize,
    pub out_dim: usize,
    pub train_max_len: usize,
    pub seed: u64,
    pub epoch: usize,
    pub step: usize,
    /// Canonical parameter name → (shape, values).
    pub params: NamedParams,
    pub optimizer: Option<Adam>,
}

impl Checkpoint {
    pub fn capture(config: &TrainConfig, model: &CkcnnModel, optimizer: Option<&Adam>, epoch: usize, step: usize) -> Self {
        Self {
            format: FORMAT,
            config: config.clone(),
            in_channels: model.in_channels,
            out_dim: model.out_dim,
            train_max_len: model.train_max_len,
            seed: model.seed,
            epoch,
            step,
            params: model.store.to_named(),
            optimizer: optimizer.cloned(),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, serde_json::to_vec(self)?)?;
        fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let ckpt: Self = serde_json::from_slice(&fs::read(path)?)?;
        if ckpt.format != FORMAT {
            return Err(Error::Compatibility(format!("checkpoint format {} (expected {FORMAT})", ckpt.format)));
        }
        Ok(ckpt)
    }

    /// Rebuilds the model from the config echo and loads the stored parameters.
    pub fn restore(&self) -> Result<CkcnnModel> {
        let mut model = CkcnnModel::build(
            self.config.model_config(),
            self.in_channels,
            self.out_dim,
            self.train_max_len,
            self.seed,
        )
        .map_err(|e| Error::Compatibility(format!("cannot rebuild model: {e}")))?;
        model.store.load_named(&self.params)?;
        Ok(model)
    }
}
