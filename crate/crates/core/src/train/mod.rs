//! Mini-batch training for pre-training and fine-tuning.

mod config;
mod data;
mod monitor;
mod objective;
mod optim;
mod trainer;

pub use config::TrainConfig;
pub use data::{build_vocab, mix_and_shuffle, samples_from_records, with_act_spans, BatchItem, Pool, Sample, TrainData};
pub use monitor::{heldout_stats, mean_gate, CollapseDetector, HeldoutStats, MetricsLog, MetricsRecord};
pub use objective::{
    context_input, selection_loss, FinetuneObjective, Objective, PretrainObjective, SampleCtx, SampleLoss,
};
pub use optim::{clip_global_norm, global_norm, AdamW};
pub use trainer::{Event, RunOptions, RunSummary, StepReport, Trainer};

#[doc(hidden)]
pub use data::stream;
