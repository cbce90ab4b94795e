//! Differentiable operations recorded on a [`Graph`](crate::Graph).
//!
//! Every op computes its forward value eagerly and registers a backward
//! rule. Fused ops (GRU, layer norm, attention, conv1d) keep whatever
//! intermediates their backward pass needs.

mod attention;
mod conv;
mod elementwise;
mod gru;
mod linear;
mod norm;
mod shape;

pub use attention::attention_weights;
pub use gru::GruWeights;
