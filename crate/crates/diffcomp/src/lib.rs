//! Minimal differentiable computation: row-major `f64` tensors, MLP and LSTM
//! layers, a batched reverse-mode tape, and an adaptive-moment optimizer.
//!
//! Everything is a function of explicit arguments. A [`Graph`] borrows a
//! [`ParamBundle`] for the duration of one forward/backward trace, so two
//! trainings never share mutable state.

mod error;
mod graph;
pub mod kernels;
mod layers;
mod optim;
mod params;
mod tensor;

pub use error::{Error, Result};
pub use graph::{Graph, NodeId};
pub use layers::{Activation, Lstm, LstmSpec, LstmState, Mlp, MlpSpec};
pub use optim::{Adam, AdamConfig};
pub use params::ParamBundle;
pub use tensor::Tensor;
