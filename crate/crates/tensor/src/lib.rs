//! Dense `f64` tensors and a reverse-mode gradient tape.
//!
//! Operations are recorded on a [`Graph`] as they execute. Broadcasting is
//! limited to adding a bias vector over the last axis; every other shape
//! mismatch is an error, and any op producing NaN or infinity fails.

mod error;
pub mod finite_diff;
mod graph;
mod kernels;
mod tensor;

pub use error::{Result, TensorError};
pub use graph::{Graph, Var};
pub use kernels::{gelu, sigmoid, softplus};
pub use tensor::Tensor;
