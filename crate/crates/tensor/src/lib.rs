//! Minimal dense tensor engine with reverse-mode automatic differentiation.
//!
//! Layout is N×C×H×W throughout. Every operation that participates in
//! training records a backward rule; [`Tensor::backward`] replays them in
//! reverse topological order.

pub mod element;
pub mod error;
pub mod gradcheck;
pub mod ops;
pub mod optim;
pub mod params;
mod tensor;

pub use element::{DType, Element};
pub use error::{Result, TensorError};
pub use params::ParamStore;
pub use tensor::{grad_enabled, no_grad, numel, BackwardFn, Tensor};
