use neuralecho::model::ops::{l1_op, magnitude, si_sdr_op};
use neuralecho::model::{apply_crf, crf, load_model, save_model, CrfShape, ModelConfig, ModelInput, NeuralEcho};
use neuralecho::signal::{stft, AudioSignal, Spectrogram};
use neuralecho::features::assemble_stage1;
use neuralecho_nn::gradcheck::{finite_diff_check, GradCheckOptions};
use neuralecho_nn::optim::AdamConfig;
use neuralecho_nn::{Graph, Tensor};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn noise(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.random_range(-0.5..0.5)).collect()
}

fn signal(len: usize, seed: u64) -> AudioSignal {
    AudioSignal::new(noise(len, seed), 16000).unwrap()
}

/// Replaces every parameter with small random values so that no path
/// through the network is trivially zero.
fn randomize(model: &mut NeuralEcho, seed: u64, scale: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for p in model.store.iter_mut() {
        for v in p.value.data_mut() {
            *v = rng.random_range(-scale..scale);
        }
    }
}

/// Naive cRF over explicit `(τ_k, τ_n)` loops, independent of tap ordering
/// helpers.
fn crf_oracle(spec: &Spectrogram, k_half: usize, n_half: usize, causal: bool, taps: &[Complex64]) -> Vec<Complex64> {
    let (t, f) = (spec.frames(), spec.bins());
    let j = (2 * k_half + 1) * (2 * n_half + 1);
    let n_range: Vec<isize> = if causal {
        (-(2 * n_half as isize)..=0).collect()
    } else {
        (-(n_half as isize)..=n_half as isize).collect()
    };
    let mut out = vec![Complex64::new(0.0, 0.0); t * f];
    for n in 0..t {
        for k in 0..f {
            let mut idx = 0;
            for tk in -(k_half as isize)..=k_half as isize {
                for &tn in &n_range {
                    let (kk, nn) = (k as isize + tk, n as isize + tn);
                    if (0..f as isize).contains(&kk) && (0..t as isize).contains(&nn) {
                        out[n * f + k] += taps[(n * f + k) * j + idx] * spec.get(kk as usize, nn as usize);
                    }
                    idx += 1;
                }
            }
        }
    }
    out
}

#[test]
fn apply_crf_matches_naive_loops() {
    let y = stft(&signal(1600, 1), &Default::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for (k, n, causal) in [(1, 1, false), (1, 1, true), (0, 2, false), (2, 0, true)] {
        let shape = CrfShape { k, n, causal };
        let taps: Vec<Complex64> = (0..y.frames() * y.bins() * shape.taps())
            .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        let got = apply_crf(&y, shape, &taps).unwrap();
        let want = crf_oracle(&y, k, n, causal, &taps);
        for (a, b) in got.data().iter().zip(&want) {
            assert!((a - b).norm() < 1e-9, "{shape:?}");
        }
    }
}

#[test]
fn delta_crf_is_exact_identity() {
    let y = stft(&signal(4000, 3), &Default::default()).unwrap();
    for causal in [false, true] {
        let shape = CrfShape { causal, ..CrfShape::default() };
        let mut taps = vec![Complex64::new(0.0, 0.0); y.frames() * y.bins() * shape.taps()];
        for cell in taps.chunks_exact_mut(shape.taps()) {
            cell[shape.center()] = Complex64::new(1.0, 0.0);
        }
        let out = apply_crf(&y, shape, &taps).unwrap();
        assert_eq!(out.data(), y.data());
    }
}

#[test]
fn graph_crf_matches_apply_crf() {
    let y = stft(&signal(1200, 4), &Default::default()).unwrap();
    let shape = CrfShape::default();
    let (t, f, j) = (y.frames(), y.bins(), shape.taps());
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let raw: Vec<f64> = (0..t * j * 2 * f).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut taps = vec![Complex64::new(0.0, 0.0); t * f * j];
    for n in 0..t {
        for jj in 0..j {
            for k in 0..f {
                let base = n * j * 2 * f + jj * 2 * f;
                taps[(n * f + k) * j + jj] = Complex64::new(raw[base + k], raw[base + f + k]);
            }
        }
    }
    let want = apply_crf(&y, shape, &taps).unwrap();
    let mut g = Graph::new();
    let tv = g.constant(Tensor::new(&[t, j * 2, f], raw).unwrap());
    let sv = g.constant(Tensor::new(&[1, t, f, 2], y.to_interleaved()).unwrap());
    let out = crf(&mut g, tv, sv, shape).unwrap();
    for (a, b) in g.value(out).data().chunks_exact(2).zip(want.data()) {
        assert!((a[0] - b.re).abs() < 1e-12 && (a[1] - b.im).abs() < 1e-12);
    }
}

#[test]
fn param_count_formula_matches_store() {
    let variants = [
        ModelConfig::paper(),
        ModelConfig::toy(),
        ModelConfig::gradcheck(),
        ModelConfig { speaker_aware: true, agc_branch: true, ..ModelConfig::toy() },
        ModelConfig { speaker_aware: true, agc_branch: true, ..ModelConfig::paper() },
    ];
    for cfg in variants {
        let model = NeuralEcho::new(cfg.clone(), 0).unwrap();
        assert_eq!(model.param_count(), cfg.param_count());
    }
    let paper = ModelConfig::paper().param_count();
    assert!((2_300_000..=2_800_000).contains(&paper), "{paper}");
    let toy = ModelConfig::toy().param_count();
    assert!((80_000..=130_000).contains(&toy), "{toy}");
}

#[test]
fn fresh_model_passes_microphone_through() {
    let cfg = ModelConfig::toy();
    let model = NeuralEcho::new(cfg.clone(), 7).unwrap();
    let (mic, far) = (signal(4000, 8), signal(4000, 9));
    let input = ModelInput::prepare(&cfg, &mic, &far, None).unwrap();
    let mut g = Graph::new();
    let vars = model.forward(&mut g, &input).unwrap();
    assert_eq!(g.value(vars.y_aec).data(), &input.mic.to_interleaved()[..]);
    assert_eq!(g.value(vars.x_echo).data(), &input.farend.to_interleaved()[..]);
    assert_eq!(g.value(vars.enhanced_spec).data(), &input.mic.to_interleaved()[..]);
    let out = g.value(vars.enhanced).data();
    let err = out.iter().zip(mic.samples()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(err < 1e-10, "{err}");
}

#[test]
fn construction_is_deterministic() {
    let a = NeuralEcho::new(ModelConfig::toy(), 11).unwrap();
    let b = NeuralEcho::new(ModelConfig::toy(), 11).unwrap();
    let c = NeuralEcho::new(ModelConfig::toy(), 12).unwrap();
    let values = |m: &NeuralEcho| m.store.iter().flat_map(|(_, p)| p.value.data().to_vec()).collect::<Vec<_>>();
    assert_eq!(values(&a), values(&b));
    assert_ne!(values(&a), values(&c));
}

#[test]
fn film_at_zero_init_is_normalized_residual() {
    let cfg = ModelConfig { speaker_aware: true, ..ModelConfig::gradcheck() };
    let model = NeuralEcho::new(cfg.clone(), 3).unwrap();
    let (mic, far) = (signal(80, 1), signal(80, 2));
    let emb: Vec<f64> = noise(cfg.embedding_dim, 9);
    let input = ModelInput::prepare(&cfg, &mic, &far, Some(&emb)).unwrap();
    let mut g = Graph::new();
    let vars = model.forward(&mut g, &input).unwrap();
    let theta = g.value(vars.proj);
    let fused = g.value(vars.fused1);
    let f = cfg.bins();
    for (row, out) in theta.data().chunks_exact(f).zip(fused.data().chunks_exact(f)) {
        let mean = row.iter().sum::<f64>() / f as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / f as f64;
        let inv = 1.0 / (var + 1e-5).sqrt();
        for (x, o) in row.iter().zip(out) {
            assert!(((x - mean) * inv + x - o).abs() < 1e-12);
        }
    }
    assert!(ModelInput::prepare(&cfg, &mic, &far, None).is_err());
}

fn perturb_after(spec: &mut Spectrogram, frame: usize, rng: &mut ChaCha8Rng) {
    let f = spec.bins();
    for c in spec.data_mut()[(frame + 1) * f..].iter_mut() {
        *c += Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    }
}

#[test]
fn causal_model_ignores_future_frames() {
    let mut cfg = ModelConfig { speaker_aware: true, agc_branch: true, ..ModelConfig::gradcheck() };
    cfg.make_causal();
    let mut model = NeuralEcho::new(cfg.clone(), 5).unwrap();
    randomize(&mut model, 6, 0.3);
    let emb = noise(cfg.embedding_dim, 1);
    let (mic, far) = (signal(160, 2), signal(160, 3));
    let y = stft(&mic, &cfg.stft).unwrap();
    let x = stft(&far, &cfg.stft).unwrap();
    let run = |y: Spectrogram, x: Spectrogram| {
        let feats = assemble_stage1(&y, &x, cfg.lps_norm).unwrap();
        let input = ModelInput::from_parts(&cfg, y, x, feats, Some(emb.clone())).unwrap();
        let mut g = Graph::new();
        let v = model.forward(&mut g, &input).unwrap();
        (g.value(v.enhanced_spec).data().to_vec(), g.value(v.agc_mag.unwrap()).data().to_vec())
    };
    let (base, base_agc) = run(y.clone(), x.clone());
    let f = cfg.bins();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for trial in 0..10 {
        let n = trial % (y.frames() - 1);
        let (mut y2, mut x2) = (y.clone(), x.clone());
        perturb_after(&mut y2, n, &mut rng);
        perturb_after(&mut x2, n, &mut rng);
        let (out, agc) = run(y2, x2);
        assert_eq!(&out[..(n + 1) * f * 2], &base[..(n + 1) * f * 2], "frame {n}");
        assert_eq!(&agc[..(n + 1) * f], &base_agc[..(n + 1) * f], "frame {n}");
        assert_ne!(out, base);
    }
}

#[test]
fn non_causal_model_sees_future_frames() {
    let cfg = ModelConfig::gradcheck();
    let mut model = NeuralEcho::new(cfg.clone(), 5).unwrap();
    randomize(&mut model, 6, 0.3);
    let (mic, far) = (signal(160, 2), signal(160, 3));
    let y = stft(&mic, &cfg.stft).unwrap();
    let x = stft(&far, &cfg.stft).unwrap();
    let run = |y: Spectrogram| {
        let feats = assemble_stage1(&y, &x, cfg.lps_norm).unwrap();
        let input = ModelInput::from_parts(&cfg, y, x.clone(), feats, None).unwrap();
        let mut g = Graph::new();
        let v = model.forward(&mut g, &input).unwrap();
        g.value(v.enhanced_spec).data()[..2 * cfg.bins()].to_vec()
    };
    let mut y2 = y.clone();
    perturb_after(&mut y2, 3, &mut ChaCha8Rng::seed_from_u64(1));
    assert_ne!(run(y), run(y2));
}

#[test]
fn end_to_end_gradcheck_on_tiny_model() {
    let cfg = ModelConfig { speaker_aware: true, agc_branch: true, ..ModelConfig::gradcheck() };
    let mut model = NeuralEcho::new(cfg.clone(), 1).unwrap();
    randomize(&mut model, 2, 0.4);
    // 6 frames of a 16-point STFT with hop 8
    let len = 40;
    let (mic, far) = (signal(len, 3), signal(len, 4));
    let target = noise(len, 5);
    let emb = noise(cfg.embedding_dim, 7);
    let input = ModelInput::prepare(&cfg, &mic, &far, Some(&emb)).unwrap();
    assert_eq!(input.frames(), 6);
    let agc_target = noise(input.frames() * cfg.bins(), 6);
    let mut store = model.store.clone();
    let report = finite_diff_check(
        &mut store,
        |g, store| {
            let v = model.forward_with(g, store, &input).map_err(|e| neuralecho_nn::NnError::Config(e.to_string()))?;
            let sdr = si_sdr_op(g, v.enhanced, &target).unwrap();
            let mag = magnitude(g, v.enhanced_spec).unwrap();
            let ref_mag = vec![0.1; g.value(mag).len()];
            let l1 = l1_op(g, mag, &ref_mag).unwrap();
            let agc = l1_op(g, v.agc_mag.unwrap(), &agc_target).unwrap();
            let neg = g.scale(sdr, -1.0)?;
            let a = g.add(neg, l1)?;
            g.add(a, agc)
        },
        &GradCheckOptions { tolerance: 1e-3, max_elements: Some(6), ..Default::default() },
    )
    .unwrap();
    for b in report.failures() {
        eprintln!("{} rel {:e}", b.name, b.rel_err);
    }
    assert!(report.passed(), "max rel err {:e}", report.max_rel_err());
}

#[test]
fn checkpoint_round_trip_restores_model() {
    let cfg = ModelConfig { agc_branch: true, ..ModelConfig::gradcheck() };
    let mut model = NeuralEcho::new(cfg, 1).unwrap();
    randomize(&mut model, 2, 0.5);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    save_model(&model, None, 17, &path).unwrap();
    let (loaded, adam, meta) = load_model(&path, AdamConfig::default()).unwrap();
    assert!(adam.is_none());
    assert_eq!(meta.step, 17);
    assert_eq!(loaded.config(), model.config());
    for ((_, a), (_, b)) in loaded.store.iter().zip(model.store.iter()) {
        assert_eq!(a.name, b.name);
        for (x, y) in a.value.data().iter().zip(b.value.data()) {
            assert_eq!(*x, *y as f32 as f64);
        }
    }
    let (mic, far) = (signal(80, 1), signal(80, 2));
    let out = loaded.enhance(&mic, &far, None).unwrap();
    assert_eq!(out.signal.len(), 80);
    assert!(out.post_agc.unwrap().samples().iter().all(|v| v.is_finite()));
}

fn zero_params(model: &mut NeuralEcho, prefix: &str) {
    let names: Vec<String> = model.store.iter().map(|(_, p)| p.name.clone()).filter(|n| n.starts_with(prefix)).collect();
    assert!(!names.is_empty(), "no parameters under {prefix}");
    for name in names {
        let id = model.store.find(&name).unwrap();
        model.store.get_mut(id).value.fill(0.0);
    }
}

fn toy_input(cfg: &ModelConfig) -> ModelInput {
    let (mic, far) = (signal(160, 21), signal(160, 22));
    ModelInput::prepare(cfg, &mic, &far, None).unwrap()
}

#[test]
fn zero_stage1_heads_give_zero_estimates() {
    let cfg = ModelConfig::gradcheck();
    let mut model = NeuralEcho::new(cfg.clone(), 1).unwrap();
    randomize(&mut model, 2, 0.3);
    zero_params(&mut model, "stage1.aec_head");
    zero_params(&mut model, "stage1.echo_head");
    let mut g = Graph::new();
    let v = model.forward(&mut g, &toy_input(&cfg)).unwrap();
    assert!(g.value(v.y_aec).data().iter().all(|&x| x == 0.0));
    assert!(g.value(v.x_echo).data().iter().all(|&x| x == 0.0));
}

#[test]
fn zero_attention_output_leaves_residual() {
    let cfg = ModelConfig::gradcheck();
    let mut model = NeuralEcho::new(cfg.clone(), 1).unwrap();
    randomize(&mut model, 2, 0.3);
    zero_params(&mut model, "stage2.attn1.output");
    let mut g = Graph::new();
    let v = model.forward(&mut g, &toy_input(&cfg)).unwrap();
    assert_eq!(g.value(v.phi_attn).data(), g.value(v.phi_proj).data());
}

#[test]
fn zero_filters_give_silence() {
    let cfg = ModelConfig::gradcheck();
    let mut model = NeuralEcho::new(cfg.clone(), 1).unwrap();
    randomize(&mut model, 2, 0.3);
    zero_params(&mut model, "stage2.filter_head");
    let mut g = Graph::new();
    let v = model.forward(&mut g, &toy_input(&cfg)).unwrap();
    assert!(g.value(v.enhanced).data().iter().all(|&x| x == 0.0));
}

#[test]
fn zero_agc_head_gives_constant_ln2_magnitude() {
    let cfg = ModelConfig { agc_branch: true, ..ModelConfig::gradcheck() };
    let mut model = NeuralEcho::new(cfg.clone(), 1).unwrap();
    randomize(&mut model, 2, 0.3);
    zero_params(&mut model, "agc.head");
    let input = toy_input(&cfg);
    let mut g = Graph::new();
    let v = model.forward(&mut g, &input).unwrap();
    let ln2 = std::f64::consts::LN_2;
    assert!(g.value(v.agc_mag.unwrap()).data().iter().all(|&m| (m - ln2).abs() < 1e-15));
    let out = model.enhance_input(&input).unwrap();
    assert!(out.post_agc.unwrap().samples().iter().all(|v| v.is_finite()));
}

#[test]
fn agc_magnitudes_are_nonnegative() {
    let cfg = ModelConfig { agc_branch: true, ..ModelConfig::gradcheck() };
    for seed in 0..5 {
        let mut model = NeuralEcho::new(cfg.clone(), seed).unwrap();
        randomize(&mut model, seed + 10, 3.0);
        let mut g = Graph::new();
        let v = model.forward(&mut g, &toy_input(&cfg)).unwrap();
        assert!(g.value(v.agc_mag.unwrap()).data().iter().all(|&m| m >= 0.0));
    }
}

#[test]
fn filter_application_is_additive_in_the_stack() {
    use neuralecho::model::ops::filter_apply;
    let (t, f) = (4, 5);
    let w = noise(t * 6 * f, 1);
    let (a, b) = (noise(3 * t * f * 2, 2), noise(3 * t * f * 2, 3));
    let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
    let run = |z: &[f64]| {
        let mut g = Graph::new();
        let wv = g.constant(Tensor::new(&[t, 6 * f], w.clone()).unwrap());
        let zv = g.constant(Tensor::new(&[3, t, f, 2], z.to_vec()).unwrap());
        let o = filter_apply(&mut g, wv, zv).unwrap();
        g.value(o).data().to_vec()
    };
    let (ra, rb, rs) = (run(&a), run(&b), run(&sum));
    for i in 0..ra.len() {
        assert!((ra[i] + rb[i] - rs[i]).abs() < 1e-10);
    }
}

#[test]
fn covariance_pack_matches_outer_product_oracle() {
    use neuralecho::model::ops::cov_pack;
    let (m, t, f) = (3, 3, 4);
    let z = noise(m * t * f * 2, 4);
    let mut g = Graph::new();
    let zv = g.constant(Tensor::new(&[m, t, f, 2], z.clone()).unwrap());
    let packed = cov_pack(&mut g, zv).unwrap();
    let packed = g.value(packed).data().to_vec();
    let at = |c: usize, n: usize, k: usize| {
        let i = ((c * t + n) * f + k) * 2;
        Complex64::new(z[i], z[i + 1])
    };
    for n in 0..t {
        for k in 0..f {
            let mu = (0..m).map(|c| at(c, n, k)).sum::<Complex64>() / m as f64;
            let d: Vec<Complex64> = (0..m).map(|c| at(c, n, k) - mu).collect();
            let base = (n * f + k) * 12;
            let mut p = 0;
            for i in 0..m {
                for j in 0..=i {
                    let e = d[i] * d[j].conj();
                    assert!((packed[base + p] - e.re).abs() < 1e-12);
                    assert!((packed[base + 6 + p] - e.im).abs() < 1e-12);
                    p += 1;
                }
            }
        }
    }
    // identical channels have no spread around their mean
    let same: Vec<f64> = (0..m).flat_map(|_| z[..t * f * 2].to_vec()).collect();
    let mut g = Graph::new();
    let zv = g.constant(Tensor::new(&[m, t, f, 2], same).unwrap());
    let packed = cov_pack(&mut g, zv).unwrap();
    assert!(g.value(packed).data().iter().all(|&x| x == 0.0));
}
