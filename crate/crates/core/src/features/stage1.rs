use neuralecho_nn::Tensor;
use num_complex::Complex64;
use rayon::prelude::*;

use super::correlation::{frequency_lags, temporal_lags, DEFAULT_LAGS};
use super::hermitian::{pack_lower_into, packed_len};
use crate::error::{Error, Result};
use crate::signal::{lps, LpsNorm, Spectrogram, LOG_FLOOR};

/// Per-bin feature width: `6 + 4·90 + 2`.
pub const STAGE1_DIM: usize = 368;

/// Offsets of each block inside a stage-1 feature vector.
pub mod layout {
    pub const CHANNEL_COV: std::ops::Range<usize> = 0..6;
    pub const TEMPORAL_MIC: std::ops::Range<usize> = 6..96;
    pub const TEMPORAL_FAR: std::ops::Range<usize> = 96..186;
    pub const FREQUENCY_MIC: std::ops::Range<usize> = 186..276;
    pub const FREQUENCY_FAR: std::ops::Range<usize> = 276..366;
    pub const LPS_MIC: usize = 366;
    pub const LPS_FAR: usize = 367;
}

fn pack_outer(u: &[Complex64], include_diagonal: bool, out: &mut [f64]) {
    pack_lower_into(u.len(), include_diagonal, |i, j| u[i] * u[j].conj(), out);
}

/// Stage-1 input features as a `[T, F, 368]` tensor.
pub fn assemble_stage1(y: &Spectrogram, x: &Spectrogram, norm: LpsNorm) -> Result<Tensor> {
    if !y.same_shape(x) {
        return Err(Error::Shape(format!(
            "mic spectrogram is {}x{}, far-end is {}x{}",
            y.frames(),
            y.bins(),
            x.frames(),
            x.bins()
        )));
    }
    debug_assert_eq!(
        packed_len(2, true) + 4 * packed_len(DEFAULT_LAGS + 1, false) + 2,
        STAGE1_DIM
    );
    let (t, f) = (y.frames(), y.bins());
    let lps_y = norm.apply(&lps(y, LOG_FLOOR));
    let lps_x = norm.apply(&lps(x, LOG_FLOOR));

    let mut data = vec![0.0; t * f * STAGE1_DIM];
    data.par_chunks_mut(f * STAGE1_DIM).enumerate().for_each(|(n, frame)| {
        for (k, v) in frame.chunks_exact_mut(STAGE1_DIM).enumerate() {
            let (yk, xk) = (y.get(k, n), x.get(k, n));
            let mu = (yk + xk) * 0.5;
            pack_outer(&[yk - mu, xk - mu], true, &mut v[layout::CHANNEL_COV]);
            pack_outer(&temporal_lags(y, k, n, DEFAULT_LAGS), false, &mut v[layout::TEMPORAL_MIC]);
            pack_outer(&temporal_lags(x, k, n, DEFAULT_LAGS), false, &mut v[layout::TEMPORAL_FAR]);
            pack_outer(&frequency_lags(y, k, n, DEFAULT_LAGS), false, &mut v[layout::FREQUENCY_MIC]);
            pack_outer(&frequency_lags(x, k, n, DEFAULT_LAGS), false, &mut v[layout::FREQUENCY_FAR]);
            v[layout::LPS_MIC] = lps_y.data()[n * f + k];
            v[layout::LPS_FAR] = lps_x.data()[n * f + k];
        }
    });
    Ok(Tensor::new(&[t, f, STAGE1_DIM], data)?)
}
