//! Minimal dense-tensor autograd used by the VQAI toy models.
//!
//! Everything is generic over [`Scalar`] (implemented for `f32` and `f64`) so
//! models train in single precision and are gradient-checked in double
//! precision with the same code.

pub mod graph;
pub mod nn;
pub mod optim;
mod scalar;
mod tensor;

pub use graph::{Gradients, Graph, Var, IGNORE_INDEX};
pub use nn::{ParamId, ParamStore};
pub use scalar::Scalar;
pub use tensor::Tensor;
