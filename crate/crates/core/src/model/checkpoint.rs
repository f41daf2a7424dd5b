use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DialogModel, ModelConfig, NamedParam, Vocab};
use crate::autodiff::Tensor;
use crate::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Adaptive-moment optimizer state, one moment pair per parameter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub t: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

/// Position in training. All randomness is derived from `(seed, epoch,
/// step)` counters, so these fields are the complete RNG state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub seed: u64,
    pub step: u64,
    pub epoch: u64,
    pub batch_in_epoch: u64,
    pub optimizer: OptimizerState,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: ModelConfig,
    pub vocab: Option<Vocab>,
    pub params: Vec<NamedParam>,
    pub train: Option<TrainState>,
}

#[derive(Deserialize)]
struct Header {
    version: u32,
}

impl Checkpoint {
    pub fn capture(model: &DialogModel, vocab: Option<&Vocab>, train: Option<TrainState>) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            config: model.config().clone(),
            vocab: vocab.cloned(),
            params: model.params().entries().to_vec(),
            train,
        }
    }

    /// Rebuilds the model with the stored parameters.
    pub fn restore_model(&self) -> Result<DialogModel> {
        DialogModel::from_params(self.config.clone(), &self.params)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::Checkpoint(format!("unreadable checkpoint: {e}")))?;
        let header: Header = serde_json::from_value(value.clone())
            .map_err(|e| Error::Checkpoint(format!("missing version: {e}")))?;
        if header.version != CHECKPOINT_VERSION {
            return Err(Error::CheckpointVersion {
                found: header.version,
                expected: CHECKPOINT_VERSION,
            });
        }
        serde_json::from_value(value).map_err(|e| Error::Checkpoint(e.to_string()))
    }

    /// Writes through a temporary sibling file and renames it into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(self.to_json()?.as_bytes())?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}
