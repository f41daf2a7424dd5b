//! Run configuration, read from TOML.
//!
//! ```toml
//! seed = 11
//! max_vocab = 512
//! heldout_dialogs = 200
//! alpha = 1.0
//! pseudo_threshold = 0.5
//!
//! [synth]       # num_dialogs, labeled_fraction, noise_fraction, min_exchanges, max_exchanges
//! [model]       # num_layers, hidden_dim, num_heads, ff_dim, max_positions, dropout, init_std, ...
//! [train]       # epochs, batch_size, learning_rate, weight_decay, max_grad_norm, monitor_every,
//!               # checkpoint_every, balanced_batches, collapse_patience, abort_on_collapse, ...
//! [generation]  # max_len, beam_width
//! ```
//!
//! Every key is optional. `model.vocab_size` is replaced by the size of the
//! vocabulary built from the corpus, and `train.seed` by the top-level seed.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use semidial::corpus::SynthConfig;
use semidial::model::{GenerationConfig, ModelConfig};
use semidial::train::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationSection {
    pub max_len: usize,
    pub beam_width: usize,
}

impl Default for GenerationSection {
    fn default() -> Self {
        let g = GenerationConfig::default();
        Self {
            max_len: g.max_len,
            beam_width: g.beam_width,
        }
    }
}

impl From<&GenerationSection> for GenerationConfig {
    fn from(g: &GenerationSection) -> Self {
        Self {
            max_len: g.max_len,
            beam_width: g.beam_width,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub max_vocab: usize,
    /// Size of the fully labeled held-out split written by `synth`.
    pub heldout_dialogs: usize,
    /// Weight of the act loss during fine-tuning.
    pub alpha: f64,
    pub pseudo_threshold: f64,
    pub synth: SynthConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub generation: GenerationSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 11,
            max_vocab: 512,
            heldout_dialogs: 200,
            alpha: 1.0,
            pseudo_threshold: 0.5,
            synth: SynthConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            generation: GenerationSection::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("invalid config {}", path.display()))
    }

    pub fn validate(&mut self) -> Result<()> {
        self.train.seed = self.seed;
        if !(0.0..=1.0).contains(&self.pseudo_threshold) {
            bail!("pseudo_threshold {} outside [0, 1]", self.pseudo_threshold);
        }
        if !self.alpha.is_finite() || self.alpha < 0.0 {
            bail!("alpha must be finite and non-negative, got {}", self.alpha);
        }
        if self.max_vocab < 16 {
            bail!("max_vocab {} is too small", self.max_vocab);
        }
        self.train.validate()?;
        Ok(())
    }
}
