//! Minimal dense numeric core: tensors, reverse-mode autodiff, Adam, checkpoints.

pub mod adam;
pub mod checkpoint;
mod error;
pub mod gradcheck;
pub mod graph;
pub mod kernels;
mod params;
mod scalar;
mod tensor;

pub use adam::{AdamConfig, AdamState, StepOutcome};
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use error::{NumericsError, Result};
pub use graph::{Graph, Var};
pub use params::{Gradients, Param, ParamId, ParamStore};
pub use scalar::Scalar;
pub use tensor::Tensor;
