//! Reverse-mode automatic differentiation over `f64` tensors.
//!
//! Values are recorded on a [`Tape`] as they are computed and differentiated
//! with a single reverse sweep. Complex values are pairs of real tensors
//! ([`CVar`]) so the tape itself stays purely real.

mod complex;
mod error;
mod gemm;
mod tape;
mod tensor;

pub mod checkpoint;
pub mod gradcheck;

pub use checkpoint::Checkpoint;
pub use complex::{complex_linear, CVar, ComplexTensor};
pub use error::{Result, TensorError};
pub use tape::{Gradients, OpKind, Tape, Var};
pub use tensor::Tensor;
