//! Minimal tensor and differentiable-layer substrate.
//!
//! The op set is closed: linear, matmul, conv1d, nearest upsampling,
//! ReLU/GELU, layer norm, embedding, causal multi-head attention, pooling,
//! cross-entropy and smooth-L1. Every op has a hand-written backward that is
//! verified against central finite differences (see [`gradcheck`]).

pub mod blob;
pub mod gradcheck;
mod graph;
pub mod layers;
pub mod ops;
mod optim;
mod params;
mod real;
mod tensor;

pub use graph::{Backward, Graph, NodeId};
pub use optim::{adam_step, OptimConfig};
pub use params::{Gradients, ParamId, ParamStore, Parameter};
pub use real::Real;
pub use tensor::Tensor;
