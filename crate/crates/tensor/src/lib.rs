//! Dense tensor engine with reverse-mode automatic differentiation.
//!
//! The engine is define-by-run: every forward pass records its operations on
//! a fresh [`Tape`], and [`Tape::backward`] replays the record in reverse to
//! populate gradients. Only the operations needed by a conv encoder-decoder
//! stack are provided (convolutions, batch norm, a small set of elementwise
//! maps and scalar reductions); there is no broadcasting, pooling or GPU path.
//!
//! All arithmetic is generic over [`Element`] so the same kernels run in f32
//! for training and in f64 for finite-difference gradient checking.

mod batchnorm;
mod conv;
mod element;
mod error;
mod gradcheck;
mod tape;
mod tensor;

pub use batchnorm::{BnMode, BnState};
pub use element::Element;
pub use error::{Result, TensorError};
pub use gradcheck::{gradient_check, gradient_check_at, GradCheckReport};
pub use tape::{Activation, Tape, Var};
pub use tensor::Tensor;
