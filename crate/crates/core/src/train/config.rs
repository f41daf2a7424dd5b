use serde::{Deserialize, Serialize};

use crate::objectives::Ablation;
use crate::{Error, Result};

/// Optimization hyperparameters. Defaults are desk-scale; the full-size
/// regime used batch 128 and learning rate 1e-5. The dropout rate lives in
/// [`ModelConfig`](crate::model::ModelConfig).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub max_grad_norm: Option<f64>,
    /// Context tokens kept per sample (oldest dropped first).
    pub max_context_len: usize,
    pub max_response_len: usize,
    /// Weight of the act loss when fine-tuning (0 or 1).
    pub alpha: f64,
    /// Steps between checkpoints; 0 disables them.
    pub checkpoint_every: u64,
    /// Steps between metrics records.
    pub monitor_every: u64,
    /// Half of every batch drawn from the labeled pool instead of mixing
    /// proportionally.
    pub balanced_batches: bool,
    pub ablation: Ablation,
    /// Consecutive monitor records that must look collapsed before the
    /// flag is raised.
    pub collapse_patience: usize,
    /// Stop with [`Error::Collapsed`] once collapse is flagged.
    pub abort_on_collapse: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 11,
            epochs: 3,
            batch_size: 16,
            learning_rate: 1e-3,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            max_grad_norm: Some(1.0),
            max_context_len: 64,
            max_response_len: 24,
            alpha: 1.0,
            checkpoint_every: 0,
            monitor_every: 50,
            balanced_batches: false,
            ablation: Ablation::default(),
            collapse_patience: 2,
            abort_on_collapse: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.batch_size == 0 || self.epochs == 0 {
            return fail("batch_size and epochs must be positive".into());
        }
        if !(self.learning_rate >= 0.0) || !(self.weight_decay >= 0.0) {
            return fail("learning rate and weight decay must be non-negative".into());
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return fail("adam betas must lie in [0, 1)".into());
        }
        if self.monitor_every == 0 {
            return fail("monitor_every must be positive".into());
        }
        if self.max_response_len == 0 || self.max_context_len == 0 {
            return fail("sequence limits must be positive".into());
        }
        Ok(())
    }
}
