use serde::{Deserialize, Serialize};

use crate::corpus::NUM_DAS;
use crate::{Error, Result};

/// Transformer hyperparameters.
///
/// Defaults are desk-scale. The full-size regime is 12 layers, hidden 768,
/// 12 heads, feed-forward 3072 and 512 positions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub num_heads: usize,
    pub ff_dim: usize,
    pub max_positions: usize,
    pub max_turns: usize,
    pub num_roles: usize,
    pub num_das: usize,
    pub dropout: f64,
    /// Std of the truncated-normal weight init.
    pub init_std: f64,
    pub layer_norm_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vocab_size: 512,
            num_layers: 2,
            hidden_dim: 64,
            num_heads: 4,
            ff_dim: 256,
            max_positions: 96,
            max_turns: 16,
            num_roles: 2,
            num_das: NUM_DAS,
            dropout: 0.3,
            init_std: 0.02,
            layer_norm_eps: 1e-5,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.hidden_dim == 0 || self.num_heads == 0 || self.hidden_dim % self.num_heads != 0 {
            return fail(format!(
                "hidden_dim {} must be a positive multiple of num_heads {}",
                self.hidden_dim, self.num_heads
            ));
        }
        if self.num_das != NUM_DAS {
            return fail(format!("num_das must be {NUM_DAS}, got {}", self.num_das));
        }
        if self.num_roles != 2 {
            return fail(format!("num_roles must be 2, got {}", self.num_roles));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout {} outside [0, 1)", self.dropout));
        }
        for (name, v) in [
            ("vocab_size", self.vocab_size),
            ("num_layers", self.num_layers),
            ("ff_dim", self.ff_dim),
            ("max_positions", self.max_positions),
            ("max_turns", self.max_turns),
        ] {
            if v == 0 {
                return fail(format!("{name} must be positive"));
            }
        }
        if self.max_positions < 4 {
            return fail("max_positions must fit [CLS] + one token + [BOS][EOS]".into());
        }
        if !(self.init_std >= 0.0) {
            return fail(format!("init_std {} must be non-negative", self.init_std));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_dim / self.num_heads
    }
}
