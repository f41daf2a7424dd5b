//! Metrics and fine-tuning sequence layout.

mod bleu;
mod delex;
mod metrics;
mod sequence;

use serde::{Deserialize, Serialize};

pub use bleu::bleu;
pub use delex::delexicalize;
pub use metrics::{
    chance_f1, combined_score, da_f1, da_f1_with, predict_labels, threshold_labels, F1Average,
};
pub use sequence::{
    assemble_finetune_sequence, assemble_finetune_target, parse_finetune_sequence, parse_finetune_target,
    FinetuneSequence, StructuredResponse,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub bleu: f64,
    pub da_f1: Option<f64>,
    /// Externally supplied task metrics (inform/success or match/succ-f1).
    pub metric1: Option<f64>,
    pub metric2: Option<f64>,
    pub comb: Option<f64>,
}

impl EvalReport {
    pub fn new(bleu: f64, da_f1: Option<f64>, metric1: Option<f64>, metric2: Option<f64>) -> Self {
        let comb = match (metric1, metric2) {
            (Some(a), Some(b)) => Some(combined_score(a, b, bleu)),
            _ => None,
        };
        Self {
            bleu,
            da_f1,
            metric1,
            metric2,
            comb,
        }
    }
}
