//! Second-order statistics features for the first stage.

mod correlation;
mod dump;
mod hermitian;
mod stage1;

pub use correlation::{
    channel_covariance, frequency_correlation, frequency_lags, temporal_correlation, temporal_lags,
    DEFAULT_LAGS,
};
pub use dump::{read_feature_dump, write_feature_dump};
pub use hermitian::{pack_hermitian, packed_len, HermitianMatrix, HERMITIAN_TOL};
pub use stage1::{assemble_stage1, layout, STAGE1_DIM};
