//! Minimal reverse-mode automatic differentiation over dense f64 tensors.
//!
//! The graph is rebuilt on every forward pass. Parameters live outside the
//! graph in [`Parameters`] and are bound as leaves each time.

mod check;
mod graph;
mod optim;
mod params;
mod tensor;

pub use check::{grad_check, GradCheck};
pub use graph::{Graph, Var};
pub use optim::{Optimizer, OptimizerRule};
pub use params::Parameters;
pub use tensor::Tensor;
