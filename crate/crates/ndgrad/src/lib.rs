//! Differentiable-array engine: tensors, a tape-based reverse-mode gradient
//! graph, an Adam optimizer, a finite-difference gradient oracle, and the
//! `NOCK1` checkpoint format.
//!
//! Element precision is a type parameter everywhere: `f32` for training
//! speed, `f64` for verification suites where finite-difference tolerances
//! matter.

pub mod adam;
pub mod checkpoint;
mod error;
pub mod gradcheck;
mod graph;
pub mod kernels;
mod scalar;
mod tensor;

pub use adam::AdamState;
pub use error::{Error, Result};
pub use graph::{BnMode, BnRunning, Graph, Var, ZSCORE_GUARD};
pub use scalar::{Dtype, Scalar};
pub use tensor::Tensor;
