//! The dialog transformer: inputs, masks, parameters, forward pass,
//! decoding and checkpoints.

mod checkpoint;
mod config;
mod generate;
mod input;
mod params;
mod transformer;
pub mod vocab;

pub use checkpoint::{Checkpoint, OptimizerState, TrainState, CHECKPOINT_VERSION};
pub use config::ModelConfig;
pub use generate::{generate, GenerationConfig};
pub use input::{
    build_generation_prefix, build_input, build_mask, AttentionKind, AttentionMask, ContextTurn, DialogInput, Role,
};
pub use params::{truncated_normal, NamedParam, ParamId, ParamStore};
pub use transformer::{BoundModel, DialogModel, DropoutCtx, Encoded, HeadIds, Mode, ModelOutputs};
pub use vocab::Vocab;
