//! Reverse-mode differentiation over real tensors.
//!
//! A [`Graph`] evaluates every operation eagerly and records it on a tape.
//! [`Graph::backward`] then sweeps the tape in reverse, accumulating adjoints
//! into every node that depends on a variable or parameter. Complex numbers
//! are carried as separate real and imaginary tensors.

mod graph;
pub mod layers;
mod params;
mod tensor;

pub use graph::{Graph, NodeId, Padding};
pub use params::{finite_diff_gradient, AdamConfig, ParamEntry, ParameterSet};
pub use tensor::Tensor;
