//! Semi-supervised pre-training for task-oriented dialog models.

pub mod autodiff;
pub mod baselines;
pub mod corpus;
pub mod eval;
mod error;
pub mod model;
pub mod objectives;
pub mod train;

pub use error::{Error, Result};
