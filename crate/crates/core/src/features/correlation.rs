use num_complex::Complex64;

use super::HermitianMatrix;
use crate::signal::Spectrogram;

/// Maximum time and frequency lag used for the correlation features.
pub const DEFAULT_LAGS: usize = 9;

/// `Φ^C = (Z − μ)(Z − μ)^H` with `Z = [y, x]` and `μ = (y + x)/2`.
pub fn channel_covariance(y: Complex64, x: Complex64) -> HermitianMatrix {
    let mu = (y + x) * 0.5;
    HermitianMatrix::outer(&[y - mu, x - mu])
}

/// `[Z(k,n), Z(k,n−1), …, Z(k,n−n_tau)]`, zero for negative frames.
pub fn temporal_lags(spec: &Spectrogram, k: usize, n: usize, n_tau: usize) -> Vec<Complex64> {
    (0..=n_tau)
        .map(|tau| if tau <= n { spec.get(k, n - tau) } else { Complex64::new(0.0, 0.0) })
        .collect()
}

/// `[Z(k,n), Z(k−1,n), …, Z(k−k_tau,n)]`, zero below bin 0.
pub fn frequency_lags(spec: &Spectrogram, k: usize, n: usize, k_tau: usize) -> Vec<Complex64> {
    (0..=k_tau)
        .map(|tau| if tau <= k { spec.get(k - tau, n) } else { Complex64::new(0.0, 0.0) })
        .collect()
}

pub fn temporal_correlation(spec: &Spectrogram, k: usize, n: usize, n_tau: usize) -> HermitianMatrix {
    HermitianMatrix::outer(&temporal_lags(spec, k, n, n_tau))
}

pub fn frequency_correlation(spec: &Spectrogram, k: usize, n: usize, k_tau: usize) -> HermitianMatrix {
    HermitianMatrix::outer(&frequency_lags(spec, k, n, k_tau))
}
