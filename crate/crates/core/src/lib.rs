//! NeuralEcho: two-stage neural acoustic echo cancellation with
//! speaker-conditioned enhancement and automatic gain control.

pub mod config;
pub mod error;
pub mod features;
pub mod model;
pub mod signal;
pub mod simulate;
pub mod train;

pub use error::{Error, Result};
