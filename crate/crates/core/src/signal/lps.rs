use neuralecho_nn::Tensor;
use serde::{Deserialize, Serialize};

use super::Spectrogram;

/// Default additive floor inside the logarithm.
pub const LOG_FLOOR: f64 = 1e-12;
/// Lower bound on the global standard deviation used for normalization.
pub const SIGMA_FLOOR: f64 = 1e-8;

/// How log-power spectra are standardized.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LpsNorm {
    /// Statistics over the whole utterance.
    #[default]
    Utterance,
    /// Statistics over frames `0..=n` for frame `n`, so the output never
    /// depends on future frames.
    Causal,
}

impl LpsNorm {
    pub fn apply(self, lps: &Tensor) -> Tensor {
        match self {
            LpsNorm::Utterance => normalize_lps(lps),
            LpsNorm::Causal => causal_normalize_lps(lps),
        }
    }

    /// Vector-Jacobian product of [`LpsNorm::apply`].
    pub fn backward(self, lps: &Tensor, grad: &Tensor) -> Tensor {
        match self {
            LpsNorm::Utterance => normalize_lps_backward(lps, grad),
            LpsNorm::Causal => causal_normalize_lps_backward(lps, grad),
        }
    }
}

/// `ln(|S|² + floor)` laid out as `[T, F]` (frame-major, like the spectrogram).
pub fn lps(spec: &Spectrogram, floor: f64) -> Tensor {
    let data = spec.data().iter().map(|c| (c.norm_sqr() + floor).ln()).collect();
    Tensor::new(&[spec.frames(), spec.bins()], data).expect("shape matches data")
}

struct Stats {
    mean: Vec<f64>,
    sigma: f64,
    floored: bool,
}

fn stats(x: &[f64], frames: usize, bins: usize) -> Stats {
    let mut mean = vec![0.0; bins];
    for row in x.chunks_exact(bins).take(frames) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= frames as f64;
    }
    let mut var = 0.0;
    for row in x.chunks_exact(bins).take(frames) {
        for (m, v) in mean.iter().zip(row) {
            var += (v - m).powi(2);
        }
    }
    var /= (frames * bins) as f64;
    let sigma = var.sqrt();
    Stats {
        mean,
        floored: sigma < SIGMA_FLOOR,
        sigma: sigma.max(SIGMA_FLOOR),
    }
}

fn dims(x: &Tensor) -> (usize, usize) {
    let s = x.shape();
    assert_eq!(s.len(), 2, "LPS matrices are [T, F]");
    (s[0], s[1])
}

/// Per-bin mean removal over time followed by division by one global σ.
pub fn normalize_lps(lps: &Tensor) -> Tensor {
    let (t, f) = dims(lps);
    if t == 0 {
        return lps.clone();
    }
    let st = stats(lps.data(), t, f);
    let data = lps
        .data()
        .chunks_exact(f)
        .flat_map(|row| row.iter().zip(&st.mean).map(|(v, m)| (v - m) / st.sigma))
        .collect();
    Tensor::new(&[t, f], data).expect("shape matches data")
}

/// Gradient of [`normalize_lps`] with respect to its input.
pub fn normalize_lps_backward(lps: &Tensor, grad: &Tensor) -> Tensor {
    let (t, f) = dims(lps);
    let mut out = vec![0.0; t * f];
    backward_prefix(lps.data(), grad.data(), t, f, &mut out);
    Tensor::new(&[t, f], out).expect("shape matches data")
}

/// Accumulates into `acc` the gradient of utterance normalization over the
/// first `t` frames of `x`, given the output gradient `g` for those frames.
fn backward_prefix(x: &[f64], g: &[f64], t: usize, f: usize, acc: &mut [f64]) {
    if t == 0 {
        return;
    }
    let st = stats(x, t, f);
    let n = (t * f) as f64;
    let out: Vec<f64> = x[..t * f]
        .chunks_exact(f)
        .flat_map(|row| row.iter().zip(&st.mean).map(|(v, m)| (v - m) / st.sigma))
        .collect();
    let proj = if st.floored {
        0.0
    } else {
        g[..t * f].iter().zip(&out).map(|(a, b)| a * b).sum::<f64>() / n
    };
    let dc: Vec<f64> = g[..t * f]
        .iter()
        .zip(&out)
        .map(|(gj, oj)| (gj - oj * proj) / st.sigma)
        .collect();
    let mut bin_mean = vec![0.0; f];
    for row in dc.chunks_exact(f) {
        for (m, v) in bin_mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    for (i, v) in dc.iter().enumerate() {
        acc[i] += v - bin_mean[i % f] / t as f64;
    }
}

/// Prefix-statistics normalization: frame `n` is standardized with the
/// per-bin means and global σ of frames `0..=n`.
pub fn causal_normalize_lps(lps: &Tensor) -> Tensor {
    let (t, f) = dims(lps);
    let x = lps.data();
    let mut data = Vec::with_capacity(t * f);
    let mut sum = vec![0.0; f];
    let mut sum_sq = vec![0.0; f];
    for n in 0..t {
        let row = &x[n * f..(n + 1) * f];
        for k in 0..f {
            sum[k] += row[k];
            sum_sq[k] += row[k] * row[k];
        }
        let cnt = (n + 1) as f64;
        let var: f64 = (0..f)
            .map(|k| (sum_sq[k] - sum[k] * sum[k] / cnt).max(0.0))
            .sum::<f64>()
            / (cnt * f as f64);
        let sigma = var.sqrt().max(SIGMA_FLOOR);
        data.extend((0..f).map(|k| (row[k] - sum[k] / cnt) / sigma));
    }
    Tensor::new(&[t, f], data).expect("shape matches data")
}

fn causal_normalize_lps_backward(lps: &Tensor, grad: &Tensor) -> Tensor {
    let (t, f) = dims(lps);
    let mut out = vec![0.0; t * f];
    let mut g = vec![0.0; t * f];
    for n in 0..t {
        let row = &grad.data()[n * f..(n + 1) * f];
        if row.iter().all(|v| *v == 0.0) {
            continue;
        }
        g[n * f..(n + 1) * f].copy_from_slice(row);
        backward_prefix(lps.data(), &g, n + 1, f, &mut out);
        g[n * f..(n + 1) * f].iter_mut().for_each(|v| *v = 0.0);
    }
    Tensor::new(&[t, f], out).expect("shape matches data")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(t: usize, f: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..t * f).map(|_| rng.random_range(-3.0..3.0)).collect();
        Tensor::new(&[t, f], data).unwrap()
    }

    #[test]
    fn constant_matrix_normalizes_to_zero() {
        let x = Tensor::full(&[5, 4], -27.0);
        assert!(normalize_lps(&x).data().iter().all(|v| *v == 0.0));
        assert!(causal_normalize_lps(&x).data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn output_has_unit_variance_and_zero_bin_means() {
        let y = normalize_lps(&random(20, 7, 1));
        let var = y.data().iter().map(|v| v * v).sum::<f64>() / y.len() as f64;
        assert!((var - 1.0).abs() < 1e-6);
        for k in 0..7 {
            let m: f64 = (0..20).map(|n| y.data()[n * 7 + k]).sum::<f64>() / 20.0;
            assert!(m.abs() < 1e-12);
        }
    }

    #[test]
    fn shift_invariance() {
        let x = random(10, 5, 2);
        let shifted = Tensor::new(x.shape(), x.data().iter().map(|v| v + 5.0).collect()).unwrap();
        for (a, b) in normalize_lps(&x).data().iter().zip(normalize_lps(&shifted).data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn causal_last_frame_matches_utterance() {
        let x = random(9, 6, 3);
        let u = normalize_lps(&x);
        let c = causal_normalize_lps(&x);
        for k in 0..6 {
            assert!((u.data()[8 * 6 + k] - c.data()[8 * 6 + k]).abs() < 1e-10);
        }
    }

    fn numeric_vjp(norm: LpsNorm, x: &Tensor, g: &Tensor) -> Vec<f64> {
        let h = 1e-6;
        (0..x.len())
            .map(|i| {
                let mut p = x.clone();
                p.data_mut()[i] += h;
                let mut m = x.clone();
                m.data_mut()[i] -= h;
                let fp: f64 = norm.apply(&p).data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
                let fm: f64 = norm.apply(&m).data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
                (fp - fm) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn backward_matches_finite_differences() {
        for norm in [LpsNorm::Utterance, LpsNorm::Causal] {
            let x = random(6, 4, 4);
            let g = random(6, 4, 5);
            let a = norm.backward(&x, &g);
            let n = numeric_vjp(norm, &x, &g);
            for (ai, ni) in a.data().iter().zip(&n) {
                assert!((ai - ni).abs() < 1e-6, "{norm:?}: {ai} vs {ni}");
            }
        }
    }
}
