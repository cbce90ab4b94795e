//! End-to-end acceptance checks. Runs without the libtest harness so that
//! every criterion prints exactly one PASS/FAIL line, timed in isolation.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use neuralecho::config::RunConfig;
use neuralecho::features::{
    assemble_stage1, channel_covariance, frequency_correlation, pack_hermitian, temporal_correlation,
    HermitianMatrix, STAGE1_DIM,
};
use neuralecho::model::{apply_crf, load_model, CrfShape, ModelConfig, ModelInput, NeuralEcho};
use neuralecho::signal::{istft, save_wav, stft, AudioSignal, LpsNorm, Spectrogram, StftConfig};
use neuralecho::simulate::{
    image_source_rir, make_dataset, reference_agc, speech_shaped_noise, DatasetManifest, RoomSpec,
    SimulationConfig,
};
use neuralecho::train::{
    l1_mag, run_suites, si_sdr, train, GradcheckConfig, LossConfig, Schedule, TrainPaths, TrainSummary,
};
use neuralecho_nn::optim::AdamConfig;
use neuralecho_nn::Graph;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SR: u32 = 16000;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome { passed, detail: detail.into() }
}

fn c64(rng: &mut ChaCha8Rng) -> Complex64 {
    Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
}

fn white(rng: &mut ChaCha8Rng, len: usize, scale: f64) -> Vec<f64> {
    (0..len).map(|_| scale * rng.random_range(-1.0..1.0)).collect()
}

fn audio(v: Vec<f64>) -> AudioSignal {
    AudioSignal::new(v, SR).unwrap()
}

fn energy(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

fn dbfs(v: &[f64]) -> f64 {
    10.0 * (energy(v) / v.len() as f64).log10()
}

fn random_spec(rng: &mut ChaCha8Rng, cfg: &StftConfig, len: usize) -> Spectrogram {
    let mut spec = Spectrogram::zeros(cfg.clone(), len);
    spec.data_mut().iter_mut().for_each(|c| *c = c64(rng));
    spec
}

fn randomize(model: &mut NeuralEcho, seed: u64, scale: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for p in model.store.iter_mut() {
        p.value.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-scale..scale));
    }
}

/// Textbook SI-SDR, unclamped.
fn si_sdr_oracle(est: &[f64], reference: &[f64]) -> f64 {
    let alpha = est.iter().zip(reference).map(|(a, b)| a * b).sum::<f64>() / energy(reference);
    let target: Vec<f64> = reference.iter().map(|v| alpha * v).collect();
    let resid: Vec<f64> = target.iter().zip(est).map(|(t, e)| e - t).collect();
    10.0 * (energy(&target) / energy(&resid)).log10()
}

/// Lag correlation `u·u^H` with `u_i` the bin `i` frames (or bins) back.
fn corr_oracle(spec: &Spectrogram, k: usize, n: usize, time: bool) -> Vec<Vec<Complex64>> {
    let at = |lag: usize| {
        let (kk, nn) = if time { (k as isize, n as isize - lag as isize) } else { (k as isize - lag as isize, n as isize) };
        if kk < 0 || nn < 0 { Complex64::new(0.0, 0.0) } else { spec.get(kk as usize, nn as usize) }
    };
    (0..10).map(|i| (0..10).map(|j| at(i) * at(j).conj()).collect()).collect()
}

/// Lower triangle by explicit index list: real parts, then imaginary parts.
fn pack_oracle(m: &[Vec<Complex64>], diag: bool) -> Vec<f64> {
    let idx: Vec<(usize, usize)> = (0..m.len())
        .flat_map(|i| (0..m.len()).map(move |j| (i, j)))
        .filter(|&(i, j)| j < i || (diag && i == j))
        .collect();
    idx.iter().map(|&(i, j)| m[i][j].re).chain(idx.iter().map(|&(i, j)| m[i][j].im)).collect()
}

fn crf_oracle(spec: &Spectrogram, shape: CrfShape, taps: &[Complex64]) -> Vec<Complex64> {
    let (t, f) = (spec.frames() as isize, spec.bins() as isize);
    let (kh, nh) = (shape.k as isize, shape.n as isize);
    let times: Vec<isize> = if shape.causal { (-2 * nh..=0).collect() } else { (-nh..=nh).collect() };
    let j = shape.taps();
    let mut out = Vec::new();
    for n in 0..t {
        for k in 0..f {
            let mut acc = Complex64::new(0.0, 0.0);
            let mut idx = 0;
            for dk in -kh..=kh {
                for &dn in &times {
                    if (0..f).contains(&(k + dk)) && (0..t).contains(&(n + dn)) {
                        acc += taps[(n * f + k) as usize * j + idx] * spec.get((k + dk) as usize, (n + dn) as usize);
                    }
                    idx += 1;
                }
            }
            out.push(acc);
        }
    }
    out
}

fn max_dev(a: impl IntoIterator<Item = f64>) -> f64 {
    a.into_iter().fold(0.0, f64::max)
}

fn c1_stft_round_trip() -> Outcome {
    let start = Instant::now();
    let cfg = StftConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let x = white(&mut rng, SR as usize, 1.0);
        let back = istft(&stft(&audio(x.clone()), &cfg).unwrap());
        let err: Vec<f64> = x.iter().zip(back.samples()).map(|(a, b)| a - b).collect();
        worst = worst.max((energy(&err) / energy(&x)).sqrt());
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(worst < 1e-6 && secs < 5.0, format!("max rel L2 {worst:.2e} (< 1e-6), {secs:.2}s (< 5s)"))
}

fn c2_feature_width() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let cfg = StftConfig::default();
    let (y, x) = (random_spec(&mut rng, &cfg, 4000), random_spec(&mut rng, &cfg, 4000));
    let feats = assemble_stage1(&y, &x, LpsNorm::Utterance).unwrap();
    let shape = feats.shape().to_vec();
    let ok = STAGE1_DIM == 368 && shape == [y.frames(), y.bins(), 368];
    outcome(ok, format!("feature tensor {shape:?}, {} per bin (== 368)", shape[2]))
}

fn c3_oracles() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let small = StftConfig { fft_size: 32, hop: 16, ..StftConfig::default() };
    let trials = 50;
    let mut worst = [0.0f64; 7];
    for _ in 0..trials {
        let (a, b) = (c64(&mut rng), c64(&mut rng));
        let m = channel_covariance(a, b);
        let mu = (a + b) / 2.0;
        let z = [a - mu, b - mu];
        worst[0] = worst[0].max(max_dev((0..4).map(|e| (m.get(e / 2, e % 2) - z[e / 2] * z[e % 2].conj()).norm())));

        let len = rng.random_range(100..600);
        let spec = random_spec(&mut rng, &small, len);
        let (k, n) = (rng.random_range(0..spec.bins()), rng.random_range(0..spec.frames()));
        for (slot, time, got) in [
            (1, true, temporal_correlation(&spec, k, n, 9)),
            (2, false, frequency_correlation(&spec, k, n, 9)),
        ] {
            let want = corr_oracle(&spec, k, n, time);
            worst[slot] = worst[slot].max(max_dev((0..100).map(|e| (got.get(e / 10, e % 10) - want[e / 10][e % 10]).norm())));
        }

        let dim = rng.random_range(1..=10);
        let lower: Vec<Vec<Complex64>> = (0..dim)
            .map(|i| (0..=i).map(|j| if i == j { Complex64::new(rng.random_range(-1.0..1.0), 0.0) } else { c64(&mut rng) }).collect())
            .collect();
        let h: Vec<Vec<Complex64>> = (0..dim)
            .map(|i| (0..dim).map(|j| if j <= i { lower[i][j] } else { lower[j][i].conj() }).collect())
            .collect();
        let hm = HermitianMatrix::from_rows(dim, h.iter().flatten().copied().collect()).unwrap();
        for diag in [true, false] {
            let got = pack_hermitian(&hm, diag).unwrap();
            let want = pack_oracle(&h, diag);
            let dev = if got.len() == want.len() { max_dev(got.iter().zip(&want).map(|(g, w)| (g - w).abs())) } else { f64::INFINITY };
            worst[3] = worst[3].max(dev);
        }

        let shape = CrfShape { k: rng.random_range(0..3), n: rng.random_range(0..3), causal: rng.random_bool(0.5) };
        let len = rng.random_range(16..200);
        let spec = random_spec(&mut rng, &small, len);
        let taps: Vec<Complex64> = (0..spec.frames() * spec.bins() * shape.taps()).map(|_| c64(&mut rng)).collect();
        let got = apply_crf(&spec, shape, &taps).unwrap();
        let want = crf_oracle(&spec, shape, &taps);
        worst[4] = worst[4].max(max_dev(got.data().iter().zip(&want).map(|(g, w)| (g - w).norm())));

        let len = rng.random_range(32..2000);
        let reference = white(&mut rng, len, 1.0);
        let noise_level = rng.random_range(0.05..2.0);
        let gain = rng.random_range(0.2..3.0);
        let est: Vec<f64> = reference.iter().map(|r| gain * r + noise_level * rng.random_range(-1.0..1.0)).collect();
        let got = si_sdr(&audio(est.clone()), &audio(reference.clone())).unwrap();
        worst[5] = worst[5].max((got - si_sdr_oracle(&est, &reference)).abs());

        let len = rng.random_range(64..800);
        let (p, q) = (random_spec(&mut rng, &small, len), random_spec(&mut rng, &small, len));
        let want = p.data().iter().zip(q.data()).map(|(a, b)| (a.norm() - b.norm()).abs()).sum::<f64>() / p.data().len() as f64;
        worst[6] = worst[6].max((l1_mag(&p, &q).unwrap() - want).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    let names = ["covariance", "temporal", "frequency", "pack", "crf", "si_sdr", "l1_mag"];
    let detail: Vec<String> = names.iter().zip(&worst).map(|(n, w)| format!("{n} {w:.1e}")).collect();
    let ok = worst.iter().all(|w| *w < 1e-9) && secs < 30.0;
    outcome(ok, format!("{trials} instances each, max |err| {} (< 1e-9), {secs:.2}s (< 30s)", detail.join(", ")))
}

fn c4_delta_crf() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let spec = random_spec(&mut rng, &StftConfig::default(), 8000);
    let mut exact = true;
    for causal in [false, true] {
        let shape = CrfShape { causal, ..CrfShape::default() };
        let mut taps = vec![Complex64::new(0.0, 0.0); spec.frames() * spec.bins() * shape.taps()];
        for cell in taps.chunks_exact_mut(shape.taps()) {
            cell[shape.center()] = Complex64::new(1.0, 0.0);
        }
        exact &= apply_crf(&spec, shape, &taps).unwrap().data() == spec.data();
    }
    outcome(exact, "delta filter output bit-identical to input (centered and causal)")
}

fn c5_gradcheck() -> Outcome {
    let start = Instant::now();
    let cfg = GradcheckConfig::default();
    let reports = run_suites(&cfg, None).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let required = ["linear", "conv1d", "gru", "layernorm", "mhsa", "film", "softplus", "model"];
    let missing: Vec<&str> = required.iter().copied().filter(|m| !reports.iter().any(|r| r.module == *m)).collect();
    let layer_worst = max_dev(reports.iter().filter(|r| r.module != "model").map(|r| r.max_rel_err));
    let model_worst = max_dev(reports.iter().filter(|r| r.module == "model").map(|r| r.max_rel_err));
    let failed: Vec<&str> = reports.iter().filter(|r| !r.passed).map(|r| r.name).collect();
    let ok = cfg.layer_tolerance == 1e-4
        && cfg.model_tolerance == 1e-3
        && missing.is_empty()
        && failed.is_empty()
        && layer_worst < 1e-4
        && model_worst < 1e-3
        && secs < 180.0;
    outcome(
        ok,
        format!(
            "{} suites, layers max rel {layer_worst:.1e} (< 1e-4), model max rel {model_worst:.1e} (< 1e-3), failed {failed:?}, missing {missing:?}, {secs:.1}s (< 180s)",
            reports.len()
        ),
    )
}

fn c6_causality() -> Outcome {
    let mut cfg = ModelConfig { agc_branch: true, ..ModelConfig::toy() };
    cfg.make_causal();
    let mut model = NeuralEcho::new(cfg.clone(), 6).unwrap();
    randomize(&mut model, 60, 0.2);
    let mut rng = ChaCha8Rng::seed_from_u64(61);
    let len = 4000;
    let y = stft(&audio(white(&mut rng, len, 0.3)), &cfg.stft).unwrap();
    let x = stft(&audio(white(&mut rng, len, 0.3)), &cfg.stft).unwrap();
    let f = cfg.bins();
    let run = |y: Spectrogram, x: Spectrogram| {
        let feats = assemble_stage1(&y, &x, cfg.lps_norm).unwrap();
        let input = ModelInput::from_parts(&cfg, y, x, feats, None).unwrap();
        let mut g = Graph::new();
        let v = model.forward(&mut g, &input).unwrap();
        (g.value(v.enhanced_spec).data().to_vec(), g.value(v.agc_mag.unwrap()).data().to_vec())
    };
    let (base, base_agc) = run(y.clone(), x.clone());
    let mut invariant = 0;
    let trials = 10;
    for _ in 0..trials {
        let n = rng.random_range(0..y.frames() - 1);
        let (mut y2, mut x2) = (y.clone(), x.clone());
        for s in [&mut y2, &mut x2] {
            s.data_mut()[(n + 1) * f..].iter_mut().for_each(|c| *c += c64(&mut rng));
        }
        let (out, agc) = run(y2, x2);
        let prefix_same = out[..(n + 1) * f * 2] == base[..(n + 1) * f * 2] && agc[..(n + 1) * f] == base_agc[..(n + 1) * f];
        if prefix_same && out != base {
            invariant += 1;
        }
    }
    outcome(invariant == trials, format!("{invariant}/{trials} trials bit-invariant up to the perturbed frame"))
}

fn c7_mixing(dir: &Path) -> Outcome {
    let sim = SimulationConfig { duration_s: 1.0, ..SimulationConfig::default() };
    let manifest = make_dataset(&sim, 32, 7, dir).unwrap();
    let (mut ratio_err, mut mix_err): (f64, f64) = (0.0, 0.0);
    for rec in &manifest.records {
        let item = manifest.load_item(rec).unwrap();
        let (s, e, v) = (item.target.samples(), item.echo.samples(), item.noise.samples());
        let ser = 10.0 * (energy(s) / energy(e)).log10();
        let snr = 10.0 * (energy(s) / energy(v)).log10();
        ratio_err = ratio_err.max((ser - rec.ser_db).abs()).max((snr - rec.snr_db).abs());
        mix_err = mix_err.max(max_dev(item.mic.samples().iter().enumerate().map(|(i, y)| (y - (s[i] + e[i] + v[i])).abs())));
    }
    let n = manifest.records.len();
    outcome(
        n == 32 && ratio_err <= 0.01 && mix_err < 1e-7,
        format!("{n} mixtures, max SER/SNR error {ratio_err:.2e} dB (<= 0.01), max |y - (s+x+v)| {mix_err:.2e} (< 1e-7)"),
    )
}

/// T60 from the Schroeder decay: three times the −5 to −25 dB crossing interval.
fn t60_oracle(taps: &[f64]) -> f64 {
    let total = energy(taps);
    let mut tail = total;
    let (mut t5, mut t25) = (None, None);
    for (i, t) in taps.iter().enumerate() {
        let db = 10.0 * (tail / total).log10();
        if t5.is_none() && db <= -5.0 {
            t5 = Some(i);
        }
        if t25.is_none() && db <= -25.0 {
            t25 = Some(i);
        }
        tail -= t * t;
    }
    3.0 * (t25.unwrap() - t5.unwrap()) as f64 / SR as f64
}

fn c8_rir() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for rt60 in [0.2, 0.4, 0.6] {
        let room = RoomSpec {
            dimensions: [6.0, 5.0, 3.0],
            rt60,
            source_pos: [1.5, 1.2, 1.6],
            loudspeaker_pos: [4.6, 3.7, 1.0],
            noise_pos: [3.0, 4.2, 2.2],
            mic_pos: [3.1, 2.3, 1.2],
        };
        let rir = image_source_rir(&room, room.loudspeaker_pos, room.mic_pos, 500, SR).unwrap();
        let t60 = t60_oracle(&rir.taps);
        ok &= (t60 - rt60).abs() <= 0.3 * rt60;
        parts.push(format!("{rt60} -> {t60:.3}"));
    }
    outcome(ok, format!("measured T60 {} (within ±30%)", parts.join(", ")))
}

fn toy_run_config() -> RunConfig {
    RunConfig::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/toy.json")).unwrap()
}

fn c9_toy_training(dir: &Path) -> Outcome {
    let start = Instant::now();
    let rc = toy_run_config();
    let pinned = rc.simulation.duration_s == 1.0
        && rc.simulation.ser_db == [0.0, 0.0]
        && rc.simulation.snr_db == [20.0, 20.0]
        && rc.schedule.steps == 200
        && rc.schedule.val_fraction == 0.0;
    let manifest = make_dataset(&rc.simulation, 8, 9, &dir.join("data")).unwrap();
    let ckpt = dir.join("toy.ckpt");
    let summary = train(&manifest, &rc.model, &rc.loss, &rc.schedule, &TrainPaths::beside(&ckpt)).unwrap();
    let params = NeuralEcho::new(rc.model.clone(), 0).unwrap().param_count();
    let early = summary.smoothed_loss(20, 20).unwrap();
    let late = summary.smoothed_loss(200, 20).unwrap();
    let (model, _, _) = load_model(&ckpt, AdamConfig::default()).unwrap();
    let (mut before, mut after) = (0.0, 0.0);
    for rec in &manifest.records {
        let item = manifest.load_item(rec).unwrap();
        let out = model.enhance(&item.mic, &item.farend, None).unwrap();
        before += si_sdr_oracle(item.mic.samples(), item.target.samples());
        after += si_sdr_oracle(out.signal.samples(), item.target.samples());
    }
    let n = manifest.records.len() as f64;
    let (before, after) = (before / n, after / n);
    let secs = start.elapsed().as_secs_f64();
    let ok = pinned
        && summary.steps.len() == 200
        && (80_000..=130_000).contains(&params)
        && late < early
        && after - before >= 5.0
        && secs < 600.0;
    outcome(
        ok,
        format!(
            "{params} params, smoothed loss {early:.3} -> {late:.3}, SI-SDR {before:.2} -> {after:.2} dB (+{:.2}, >= 5), {secs:.1}s (< 600s)",
            after - before
        ),
    )
}

fn short_training(dir: &Path, model: &ModelConfig, loss: &LossConfig, steps: usize) -> TrainSummary {
    let sim = SimulationConfig { duration_s: 0.5, ..SimulationConfig::default() };
    let manifest = make_dataset(&sim, 3, 10, &dir.join("data")).unwrap();
    let schedule = Schedule { steps, val_fraction: 0.0, ..Schedule::default() };
    train(&manifest, model, loss, &schedule, &TrainPaths::beside(&dir.join("m.ckpt"))).unwrap()
}

fn c10_film(dir: &Path) -> Outcome {
    let cfg = ModelConfig { speaker_aware: true, ..ModelConfig::toy() };
    let model = NeuralEcho::new(cfg.clone(), 10).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let emb = white(&mut rng, cfg.embedding_dim, 1.0);
    let (mic, far) = (audio(white(&mut rng, 3000, 0.3)), audio(white(&mut rng, 3000, 0.3)));
    let input = ModelInput::prepare(&cfg, &mic, &far, Some(&emb)).unwrap();
    let mut g = Graph::new();
    let vars = model.forward(&mut g, &input).unwrap();
    let (theta, fused) = (g.value(vars.proj).data().to_vec(), g.value(vars.fused1).data().to_vec());
    let f = cfg.bins();
    let mut worst: f64 = 0.0;
    for (row, out) in theta.chunks_exact(f).zip(fused.chunks_exact(f)) {
        let mean = row.iter().sum::<f64>() / f as f64;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / f as f64;
        for (x, o) in row.iter().zip(out) {
            worst = worst.max(((x - mean) / (var + 1e-5).sqrt() + x - o).abs());
        }
    }
    let summary = short_training(dir, &cfg, &LossConfig::default(), 5);
    let completed = summary.steps.len() == 5 && summary.steps.iter().all(|s| s.loss.is_finite());
    outcome(
        worst < 1e-12 && completed,
        format!("max |fused - (LN(theta) + theta)| {worst:.1e}, speaker-aware training {} steps", summary.steps.len()),
    )
}

fn c11_agc(dir: &Path) -> Outcome {
    let mut x = speech_shaped_noise(3 * SR as usize, 11);
    let g = 10f64.powf((-35.0 - dbfs(&x)) / 20.0);
    x.iter_mut().for_each(|v| *v *= g);
    let input_level = dbfs(&x);
    let level = dbfs(reference_agc(&audio(x), -20.0, 30.0).samples());

    let cfg = ModelConfig { agc_branch: true, ..ModelConfig::toy() };
    let mut model = NeuralEcho::new(cfg.clone(), 11).unwrap();
    randomize(&mut model, 110, 0.5);
    let mut rng = ChaCha8Rng::seed_from_u64(111);
    let (mic, far) = (audio(white(&mut rng, 4000, 0.5)), audio(white(&mut rng, 4000, 0.5)));
    let input = ModelInput::prepare(&cfg, &mic, &far, None).unwrap();
    let mut graph = Graph::new();
    let vars = model.forward(&mut graph, &input).unwrap();
    let min_mag = graph.value(vars.agc_mag.unwrap()).data().iter().copied().fold(f64::INFINITY, f64::min);

    let reports = run_suites(&GradcheckConfig::default(), Some("agc")).unwrap();
    let grad_ok = !reports.is_empty() && reports.iter().all(|r| r.passed && r.tolerance == 1e-4);
    let grad_err = max_dev(reports.iter().map(|r| r.max_rel_err));

    let loss = LossConfig { agc_task: true, ..LossConfig::default() };
    let summary = short_training(dir, &cfg, &loss, 3);
    let log = std::fs::read_to_string(dir.join("train_log.jsonl")).unwrap();
    let logged = summary.steps.len() == 3
        && summary.steps.iter().all(|s| s.agc_term.is_some_and(f64::is_finite) && s.si_sdr_term.is_finite())
        && log.lines().count() == 3
        && log.lines().all(|l| l.contains("\"agc_term\"") && l.contains("\"si_sdr_term\""));

    let ok = (input_level + 35.0).abs() < 1e-9 && (level + 20.0).abs() <= 1.0 && min_mag >= 0.0 && grad_ok && logged;
    outcome(
        ok,
        format!(
            "AGC {input_level:.1} -> {level:.2} dBFS (-20 ± 1), min magnitude {min_mag:.2e} (>= 0), loss gradcheck rel {grad_err:.1e} (< 1e-4), joint log both terms: {logged}"
        ),
    )
}

fn c12_paper_size() -> Outcome {
    let cfg = ModelConfig::paper();
    let model = NeuralEcho::new(cfg.clone(), 0).unwrap();
    let n = model.store.num_scalars();
    let ok = n == cfg.param_count() && (2_300_000..=2_800_000).contains(&n);
    outcome(ok, format!("{n} parameters (within [2.3M, 2.8M])"))
}

fn c13_determinism(dir: &Path) -> Outcome {
    let sim = SimulationConfig { duration_s: 0.5, ..SimulationConfig::default() };
    let model = ModelConfig::toy();
    let schedule = Schedule { steps: 3, val_fraction: 0.0, ..Schedule::default() };
    let mut runs = Vec::new();
    for r in 0..2 {
        let root = dir.join(format!("run{r}"));
        let manifest = make_dataset(&sim, 3, 13, &root.join("data")).unwrap();
        let ckpt = root.join("m.ckpt");
        train(&manifest, &model, &LossConfig::default(), &schedule, &TrainPaths::beside(&ckpt)).unwrap();
        let (net, _, _) = load_model(&ckpt, AdamConfig::default()).unwrap();
        let item = manifest.load_item(&manifest.records[0]).unwrap();
        let out = root.join("enhanced.wav");
        save_wav(&net.enhance(&item.mic, &item.farend, None).unwrap().signal, &out).unwrap();
        runs.push(root);
    }
    let files = DatasetManifest::load(&runs[0].join("data")).unwrap();
    let mut rels = vec!["data/manifest.jsonl".to_string(), "m.ckpt".into(), "enhanced.wav".into()];
    for rec in &files.records {
        for p in [&rec.mic_path, &rec.farend_path, &rec.target_path, &rec.echo_path, &rec.noise_path, &rec.agc_target_path] {
            rels.push(format!("data/{p}"));
        }
    }
    let differing: Vec<&String> =
        rels.iter().filter(|r| std::fs::read(runs[0].join(r)).ok() != std::fs::read(runs[1].join(r)).ok()).collect();
    outcome(differing.is_empty(), format!("{} files compared, differing {differing:?}", rels.len()))
}

type Check = Box<dyn Fn() -> Outcome>;

fn main() {
    let tmp = tempfile::tempdir().unwrap();
    let sub = |name: &str| {
        let p = tmp.path().join(name);
        std::fs::create_dir_all(&p).unwrap();
        p
    };
    let checks: Vec<(&str, Check)> = vec![
        ("STFT round trip", Box::new(c1_stft_round_trip)),
        ("stage-1 feature width", Box::new(c2_feature_width)),
        ("feature, filter and loss oracles", Box::new(c3_oracles)),
        ("delta cRF identity", Box::new(c4_delta_crf)),
        ("gradient checks", Box::new(c5_gradcheck)),
        ("causal mode", Box::new(c6_causality)),
        ("mixture levels", Box::new({ let d = sub("c7"); move || c7_mixing(&d) })),
        ("image-source T60", Box::new(c8_rir)),
        ("toy training", Box::new({ let d = sub("c9"); move || c9_toy_training(&d) })),
        ("FiLM conditioning", Box::new({ let d = sub("c10"); move || c10_film(&d) })),
        ("AGC", Box::new({ let d = sub("c11"); move || c11_agc(&d) })),
        ("paper model size", Box::new(c12_paper_size)),
        ("determinism", Box::new({ let d = sub("c13"); move || c13_determinism(&d) })),
    ];
    let mut failures = 0;
    let total = Instant::now();
    for (i, (name, check)) in checks.iter().enumerate() {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            outcome(false, format!("panicked: {}", msg.unwrap_or_default()))
        });
        failures += usize::from(!result.passed);
        println!(
            "criterion {:>2} {} {name}: {} [{:.1}s]",
            i + 1,
            if result.passed { "PASS" } else { "FAIL" },
            result.detail,
            start.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {}/{} passed in {:.1?}", checks.len() - failures, checks.len(), total.elapsed());
    if failures > 0 {
        std::process::exit(1);
    }
}
