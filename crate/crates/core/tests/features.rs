use neuralecho::features::{
    assemble_stage1, channel_covariance, frequency_correlation, layout, pack_hermitian,
    temporal_correlation, STAGE1_DIM,
};
use neuralecho::signal::{lps, LpsNorm, Spectrogram, StftConfig, LOG_FLOOR};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_cfg() -> StftConfig {
    StftConfig { fft_size: 32, hop: 16, ..Default::default() }
}

fn random_spec(seed: u64, len: usize) -> Spectrogram {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut spec = Spectrogram::zeros(small_cfg(), len);
    for c in spec.data_mut() {
        *c = Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    }
    spec
}

/// Brute-force 10x10 lag correlation written without the library's lag helpers.
fn naive_corr(spec: &Spectrogram, k: usize, n: usize, time: bool) -> Vec<Vec<Complex64>> {
    let at = |tau: usize| -> Complex64 {
        let (kk, nn) = if time { (k as isize, n as isize - tau as isize) } else { (k as isize - tau as isize, n as isize) };
        if kk < 0 || nn < 0 {
            Complex64::new(0.0, 0.0)
        } else {
            spec.get(kk as usize, nn as usize)
        }
    };
    (0..10).map(|i| (0..10).map(|j| at(i) * at(j).conj()).collect()).collect()
}

/// Packs a dense matrix with an explicit index list, independent of the library packer.
fn naive_pack(m: &[Vec<Complex64>], diag: bool) -> Vec<f64> {
    let mut idx = Vec::new();
    for i in 0..m.len() {
        for j in 0..m.len() {
            if j < i || (diag && j == i) {
                idx.push((i, j));
            }
        }
    }
    idx.iter().map(|&(i, j)| m[i][j].re).chain(idx.iter().map(|&(i, j)| m[i][j].im)).collect()
}

#[test]
fn dimension_identity() {
    assert_eq!(6 + 4 * 90 + 2, STAGE1_DIM);
    let y = random_spec(1, 100);
    let x = random_spec(2, 100);
    let feat = assemble_stage1(&y, &x, LpsNorm::Utterance).unwrap();
    assert_eq!(feat.shape(), &[y.frames(), y.bins(), 368]);
}

#[test]
fn blocks_match_standalone_oracles() {
    let y = random_spec(3, 120);
    let x = random_spec(4, 120);
    let feat = assemble_stage1(&y, &x, LpsNorm::Utterance).unwrap();
    let lps_y = LpsNorm::Utterance.apply(&lps(&y, LOG_FLOOR));
    let lps_x = LpsNorm::Utterance.apply(&lps(&x, LOG_FLOOR));
    let f = y.bins();
    for n in 0..y.frames() {
        for k in 0..f {
            let v = &feat.data()[(n * f + k) * 368..(n * f + k + 1) * 368];
            let (a, b) = (y.get(k, n), x.get(k, n));
            let mu = (a + b) / 2.0;
            let cov = vec![
                vec![(a - mu) * (a - mu).conj(), (a - mu) * (b - mu).conj()],
                vec![(b - mu) * (a - mu).conj(), (b - mu) * (b - mu).conj()],
            ];
            let expected: Vec<f64> = naive_pack(&cov, true)
                .into_iter()
                .chain(naive_pack(&naive_corr(&y, k, n, true), false))
                .chain(naive_pack(&naive_corr(&x, k, n, true), false))
                .chain(naive_pack(&naive_corr(&y, k, n, false), false))
                .chain(naive_pack(&naive_corr(&x, k, n, false), false))
                .chain([lps_y.data()[n * f + k], lps_x.data()[n * f + k]])
                .collect();
            for (got, want) in v.iter().zip(&expected) {
                assert!((got - want).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn standalone_ops_match_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for trial in 0..50 {
        let a = Complex64::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
        let b = Complex64::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
        let m = channel_covariance(a, b);
        let mu = (a + b) / 2.0;
        let z = [a - mu, b - mu];
        for i in 0..2 {
            for j in 0..2 {
                assert!((m.get(i, j) - z[i] * z[j].conj()).norm() < 1e-12);
            }
        }
        let spec = random_spec(100 + trial, 80);
        let k = rng.random_range(0..spec.bins());
        let n = rng.random_range(0..spec.frames());
        for (time, got) in [(true, temporal_correlation(&spec, k, n, 9)), (false, frequency_correlation(&spec, k, n, 9))] {
            let want = naive_corr(&spec, k, n, time);
            for (i, row) in want.iter().enumerate() {
                for (j, w) in row.iter().enumerate() {
                    assert!((got.get(i, j) - w).norm() < 1e-12);
                }
            }
            assert_eq!(pack_hermitian(&got, false).unwrap(), naive_pack(&want, false));
        }
    }
}

#[test]
fn correlations_are_hermitian_psd_and_quadratic() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let spec = random_spec(7, 150);
    let scaled = spec.map(|c| c * 1.7);
    for _ in 0..30 {
        let k = rng.random_range(0..spec.bins());
        let n = rng.random_range(0..spec.frames());
        for (m, ms) in [
            (temporal_correlation(&spec, k, n, 9), temporal_correlation(&scaled, k, n, 9)),
            (frequency_correlation(&spec, k, n, 9), frequency_correlation(&scaled, k, n, 9)),
        ] {
            assert_eq!(m.max_asymmetry(), 0.0);
            for _ in 0..5 {
                let v: Vec<Complex64> = (0..10).map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
                let q: Complex64 = (0..10).flat_map(|i| (0..10).map(move |j| (i, j))).map(|(i, j)| v[i].conj() * m.get(i, j) * v[j]).sum();
                assert!(q.re >= -1e-10);
            }
            for (a, b) in m.data().iter().zip(ms.data()) {
                assert!((a * 1.7 * 1.7 - b).norm() <= 1e-10 * (1.0 + b.norm()));
            }
        }
    }
}

#[test]
fn causal_features_ignore_future_frames() {
    let y = random_spec(8, 160);
    let x = random_spec(9, 160);
    let base = assemble_stage1(&y, &x, LpsNorm::Causal).unwrap();
    let cut = 4;
    let mut y2 = y.clone();
    let f = y.bins();
    for v in &mut y2.data_mut()[(cut + 1) * f..] {
        *v *= 3.0;
    }
    let pert = assemble_stage1(&y2, &x, LpsNorm::Causal).unwrap();
    let upto = (cut + 1) * f * 368;
    assert_eq!(&base.data()[..upto], &pert.data()[..upto]);
    assert_ne!(&base.data()[upto..], &pert.data()[upto..]);
}

#[test]
fn zero_input_lps_blocks_are_constant() {
    let z = Spectrogram::zeros(small_cfg(), 64);
    let feat = assemble_stage1(&z, &z, LpsNorm::Utterance).unwrap();
    for v in feat.data().chunks_exact(368) {
        assert_eq!(v[layout::LPS_MIC], 0.0);
        assert_eq!(v[layout::LPS_FAR], 0.0);
    }
}
