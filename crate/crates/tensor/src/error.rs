use thiserror::Error;

pub type Result<T> = std::result::Result<T, TensorError>;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch, lhs {lhs:?} vs rhs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: expected {expected}, got shape {got:?}")]
    BadShape {
        op: &'static str,
        expected: String,
        got: Vec<usize>,
    },

    #[error("tensor data length {len} does not match shape {shape:?}")]
    LengthMismatch { shape: Vec<usize>, len: usize },

    #[error("{op}: produced a non-finite value (NaN or Inf)")]
    NonFinite { op: &'static str },

    #[error("backward requires a scalar root, got shape {got:?}")]
    NotScalar { got: Vec<usize> },

    #[error("batch norm in eval mode before any training batch was seen")]
    BnStateUninitialized,

    #[error("batch norm in train mode needs batch*h*w >= 2 per channel, got {got}")]
    BnBatchTooSmall { got: usize },

    #[error("{op}: {msg}")]
    Invalid { op: &'static str, msg: String },
}
