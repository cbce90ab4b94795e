//! The two-stage network: cRF-based echo cancellation, covariance-driven
//! self-attentive enhancement and the optional AGC branch.

mod checkpoint;
mod config;
mod crf;
pub mod ops;
mod network;

pub use checkpoint::{load_model, save_model, CheckpointMeta};
pub use config::{ModelConfig, STAGE2_CHANNELS};
pub use crf::{apply_crf, crf, CrfShape};
pub use network::{combine_phase, Enhanced, ForwardVars, ModelInput, NeuralEcho};
