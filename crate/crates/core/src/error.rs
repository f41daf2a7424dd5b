use crate::autodiff::TensorError;
use crate::corpus::UnknownDa;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("{mode} composition requires {missing}")]
    MissingLossPart {
        mode: &'static str,
        missing: &'static str,
    },
    #[error("label {label:?} has no mapping in source {source_name:?}")]
    UnmappedLabel { label: String, source_name: String },
    #[error(transparent)]
    UnknownDa(#[from] UnknownDa),
    #[error("corpus: {0}")]
    Corpus(String),
    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    CheckpointVersion { found: u32, expected: u32 },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("non-finite loss at step {step} (samples {samples:?}): {detail}")]
    NonFiniteLoss {
        step: u64,
        samples: Vec<String>,
        detail: String,
    },
    #[error("model collapsed: {0}")]
    Collapsed(String),
    #[error("{0} is empty")]
    Empty(&'static str),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}
