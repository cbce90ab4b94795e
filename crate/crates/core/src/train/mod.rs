//! Losses, metrics, the training loop, evaluation and gradient checks.

mod eval;
pub mod gradcheck;
mod loss;
mod trainer;

pub use eval::{evaluate, EvalItem, EvalReport, EvalSummary};
pub use gradcheck::{run_suites, GradcheckConfig, SuiteReport};
pub use loss::{agc_loss, l1_mag, neuralecho_loss, si_sdr, LossConfig, LossTarget, LossTerms};
pub use trainer::{
    check_manifest, numbered, prepare_item, split, train, Schedule, StepLog, TrainItem, TrainPaths, TrainSummary,
    ValidationLog,
};
