//! Reverse-mode automatic differentiation over dense `f64` arrays.

mod dropout;
mod gradcheck;
mod tape;
mod tensor;

pub use dropout::{mix64, mix_words, DropoutKey, DropoutMask};
pub use gradcheck::{grad_check, grad_check_with_floor, relative_error, GradCheckReport, DEFAULT_ABS_FLOOR};
pub use tape::{sigmoid, Tape, Var};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("invalid shape {shape:?}: extents must be positive")]
    InvalidShape { shape: Vec<usize> },
    #[error("shape {shape:?} does not match {len} values")]
    LengthMismatch { shape: Vec<usize>, len: usize },
    #[error("{op}: value {value} outside the domain")]
    Domain { op: &'static str, value: f64 },
    #[error("{op}: index {index} out of range for extent {bound}")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        bound: usize,
    },
    #[error("{op}: axis {axis} out of range for {ndim}-d tensor")]
    AxisOutOfRange {
        op: &'static str,
        axis: usize,
        ndim: usize,
    },
    #[error("{op}: no inputs")]
    Empty { op: &'static str },
    #[error("backward needs a scalar loss, got shape {shape:?}")]
    NotScalar { shape: Vec<usize> },
    #[error("{0}")]
    InvalidArgument(String),
}
