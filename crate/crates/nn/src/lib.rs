//! A small deterministic tensor library with reverse-mode autodiff.
//!
//! Values are `f64`. A [`Graph`] records one forward pass; calling
//! [`Graph::backward`] accumulates gradients into the [`ParamStore`] the
//! parameters came from. The layers needed by the echo-cancellation model
//! (linear, conv1d, GRU, layer norm, multi-head self-attention, FiLM) live
//! in [`layers`], the Adam optimizer in [`optim`] and finite-difference
//! verification in [`gradcheck`].

pub mod checkpoint;
mod error;
pub mod gradcheck;
mod graph;
pub mod layers;
pub mod ops;
pub mod optim;
mod params;
mod tensor;

pub use checkpoint::Checkpoint;
pub use error::{NnError, Result};
pub use graph::{Graph, Op, Var};
pub use params::{Init, ParamId, ParamStore, Parameter};
pub use tensor::Tensor;
