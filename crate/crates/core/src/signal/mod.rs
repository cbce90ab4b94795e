//! Audio I/O and the STFT analysis/synthesis front-end.

mod audio;
mod lps;
mod stft;

pub use audio::{load_wav, save_wav, AudioSignal};
pub use lps::{causal_normalize_lps, lps, normalize_lps, normalize_lps_backward, LpsNorm, LOG_FLOOR, SIGMA_FLOOR};
pub use stft::{istft, istft_adjoint, overlap_add, stft, Spectrogram, StftConfig, Window};

/// 10·log10 of the mean power, with `-inf` for silence.
pub fn rms_db(samples: &[f64]) -> f64 {
    10.0 * mean_power(samples).log10()
}

pub fn mean_power(samples: &[f64]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    samples.iter().map(|v| v * v).sum::<f64>() / samples.len() as f64
}

pub fn rms(samples: &[f64]) -> f64 {
    mean_power(samples).sqrt()
}
