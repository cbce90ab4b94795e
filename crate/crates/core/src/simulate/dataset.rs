use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::agc::{db_to_amplitude, reference_agc, AgcConfig};
use super::distortion::{apply_distortion, DistortionKind, DistortionSpec};
use super::embedding::{enroll_embedding, read_embedding, synth_speaker_embedding, write_embedding, EMBEDDING_DIM};
use super::mix::{convolve, mix, ratio_db, sum3};
use super::room::{calibrated_reflection, default_rir_len, image_source_rir_len, Point, RoomSpec};
use super::synth::{speech_shaped_noise, synth_speech, Voice};
use crate::error::{Error, IoContext, Result};
use crate::signal::{load_wav, save_wav, AudioSignal};

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const CONFIG_FILE: &str = "config.json";

/// Peak level the microphone signal is scaled to stay under.
const PEAK_LIMIT: f64 = 0.9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationConfig {
    pub sample_rate: u32,
    pub duration_s: f64,
    /// Inclusive range of signal-to-echo ratios in dB.
    pub ser_db: [f64; 2],
    pub snr_db: [f64; 2],
    pub rt60: [f64; 2],
    pub room_min: Point,
    pub room_max: Point,
    /// Minimum distance of any source or the mic from a wall, in meters.
    pub wall_margin: f64,
    pub max_order: usize,
    /// Probability that the loudspeaker path is nonlinear; clip and sigmoid
    /// are equally likely when it is.
    pub distortion_prob: f64,
    pub clip_ratio: f64,
    pub sigmoid_gain: f64,
    /// Extra far-end delay range in milliseconds (device buffering).
    pub bulk_delay_ms: [f64; 2],
    /// Dry near-end speech level range in dB relative to full scale.
    pub speech_level_dbfs: [f64; 2],
    pub agc: AgcConfig,
    /// Directory of near-end/far-end speech WAVs; synthetic speech when absent.
    pub speech_dir: Option<PathBuf>,
    pub noise_dir: Option<PathBuf>,
    pub synthetic_fallback: bool,
    pub n_speakers: usize,
    pub enroll_utterances: usize,
    /// Spread of per-utterance embeddings around the speaker's direction.
    pub enroll_jitter: f64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            sample_rate: 16000,
            duration_s: 4.0,
            ser_db: [-10.0, 10.0],
            snr_db: [0.0, 40.0],
            rt60: [0.0, 0.6],
            room_min: [3.0, 3.0, 2.5],
            room_max: [8.0, 6.0, 3.5],
            wall_margin: 0.5,
            max_order: 200,
            distortion_prob: 0.5,
            clip_ratio: 0.8,
            sigmoid_gain: 4.0,
            bulk_delay_ms: [0.0, 0.0],
            speech_level_dbfs: [-30.0, -20.0],
            agc: AgcConfig::default(),
            speech_dir: None,
            noise_dir: None,
            synthetic_fallback: true,
            n_speakers: 20,
            enroll_utterances: 5,
            enroll_jitter: 0.3,
        }
    }
}

fn check_range(name: &str, r: [f64; 2], lo: f64, hi: f64) -> Result<()> {
    if !(r[0] <= r[1] && r[0] >= lo && r[1] <= hi) {
        return Err(Error::Config(format!("{name} range {r:?} must be ordered within [{lo}, {hi}]")));
    }
    Ok(())
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sample_rate == 0 || !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return Err(Error::Config("sample_rate and duration_s must be positive".into()));
        }
        check_range("ser_db", self.ser_db, -10.0, 10.0)?;
        check_range("snr_db", self.snr_db, 0.0, 40.0)?;
        check_range("rt60", self.rt60, 0.0, 0.6)?;
        check_range("bulk_delay_ms", self.bulk_delay_ms, 0.0, 100.0)?;
        check_range("speech_level_dbfs", self.speech_level_dbfs, -80.0, 0.0)?;
        for i in 0..3 {
            if !(self.room_min[i] <= self.room_max[i] && self.room_min[i] > 2.0 * self.wall_margin) {
                return Err(Error::Config(format!(
                    "room_min/room_max axis {i} must be ordered and exceed twice wall_margin"
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.distortion_prob) {
            return Err(Error::Config("distortion_prob must be in [0, 1]".into()));
        }
        DistortionSpec {
            kind: DistortionKind::None,
            clip_ratio: self.clip_ratio,
            sigmoid_gain: self.sigmoid_gain,
        }
        .validate()
        .map_err(|e| Error::Config(e.to_string()))?;
        if self.n_speakers < 2 {
            return Err(Error::Config("n_speakers must be at least 2 (near-end and far-end differ)".into()));
        }
        if self.enroll_utterances == 0 {
            return Err(Error::Config("enroll_utterances must be positive".into()));
        }
        if self.speech_dir.is_none() && !self.synthetic_fallback {
            return Err(Error::Config("no speech_dir and synthetic_fallback disabled".into()));
        }
        Ok(())
    }

    pub fn len_samples(&self) -> usize {
        (self.duration_s * self.sample_rate as f64).round() as usize
    }
}

/// One line of `manifest.jsonl`; paths are relative to the manifest directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub id: String,
    pub mic_path: String,
    pub farend_path: String,
    pub target_path: String,
    pub echo_path: String,
    pub noise_path: String,
    pub agc_target_path: String,
    pub embedding_path: Option<String>,
    pub speaker_id: String,
    pub ser_db: f64,
    pub snr_db: f64,
    pub rt60: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub records: Vec<ManifestRecord>,
}

/// Signals of one record loaded from disk.
#[derive(Clone, Debug)]
pub struct LoadedItem {
    pub id: String,
    pub mic: AudioSignal,
    pub farend: AudioSignal,
    pub target: AudioSignal,
    pub echo: AudioSignal,
    pub noise: AudioSignal,
    pub agc_target: AudioSignal,
    pub embedding: Option<Vec<f64>>,
}

impl DatasetManifest {
    /// Reads a manifest file, or `manifest.jsonl` inside a directory.
    pub fn load(path: &Path) -> Result<Self> {
        let file = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
        let text = std::fs::read_to_string(&file).at(&file)?;
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: ManifestRecord = serde_json::from_str(line)
                .map_err(|e| Error::Manifest(format!("{}:{}: {e}", file.display(), i + 1)))?;
            records.push(rec);
        }
        let root = file.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { root, records })
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn write(&self) -> Result<PathBuf> {
        let path = self.root.join(MANIFEST_FILE);
        std::fs::write(&path, self.to_jsonl()?).at(&path)?;
        Ok(path)
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn load_item(&self, rec: &ManifestRecord) -> Result<LoadedItem> {
        let load = |rel: &str| load_wav(&self.resolve(rel));
        let item = LoadedItem {
            id: rec.id.clone(),
            mic: load(&rec.mic_path)?,
            farend: load(&rec.farend_path)?,
            target: load(&rec.target_path)?,
            echo: load(&rec.echo_path)?,
            noise: load(&rec.noise_path)?,
            agc_target: load(&rec.agc_target_path)?,
            embedding: rec.embedding_path.as_deref().map(|p| read_embedding(&self.resolve(p))).transpose()?,
        };
        let n = item.mic.len();
        for (name, s) in [
            ("far-end", &item.farend),
            ("target", &item.target),
            ("echo", &item.echo),
            ("noise", &item.noise),
            ("agc target", &item.agc_target),
        ] {
            if s.len() != n {
                return Err(Error::Manifest(format!("{}: {name} has {} samples, mic has {n}", rec.id, s.len())));
            }
        }
        Ok(item)
    }
}

/// SplitMix64 finalizer, used to derive independent per-item seeds.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

struct Pools {
    speech: Vec<(String, PathBuf)>,
    noise: Vec<PathBuf>,
}

fn list_wavs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).at(&d)? {
            let p = entry.at(&d)?.path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")) {
                out.push(p);
            }
        }
    }
    out.sort();
    Ok(out)
}

impl Pools {
    fn load(cfg: &SimulationConfig) -> Result<Self> {
        let speech = match &cfg.speech_dir {
            Some(dir) => list_wavs(dir)?
                .into_iter()
                .map(|p| {
                    // speaker = first path component under the pool, or the file stem
                    let rel = p.strip_prefix(dir).unwrap_or(&p);
                    let spk = match rel.components().count() {
                        1 => p.file_stem().unwrap_or_default().to_string_lossy().into_owned(),
                        _ => rel.components().next().unwrap().as_os_str().to_string_lossy().into_owned(),
                    };
                    (spk, p)
                })
                .collect(),
            None => Vec::new(),
        };
        let noise = match &cfg.noise_dir {
            Some(dir) => list_wavs(dir)?,
            None => Vec::new(),
        };
        if cfg.speech_dir.is_some() && speech.is_empty() && !cfg.synthetic_fallback {
            return Err(Error::Config("speech pool is empty and synthetic_fallback is disabled".into()));
        }
        Ok(Self { speech, noise })
    }
}

/// Loops or crops a signal to `len` samples, starting at a random offset.
fn fit_length(x: &[f64], len: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    if x.is_empty() {
        return vec![0.0; len];
    }
    let start = if x.len() > len { rng.random_range(0..=x.len() - len) } else { 0 };
    (0..len).map(|i| x[(start + i) % x.len()]).collect()
}

fn uniform(rng: &mut ChaCha8Rng, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.random_range(r[0]..=r[1])
    }
}

fn random_point(rng: &mut ChaCha8Rng, dims: Point, margin: f64) -> Point {
    [0, 1, 2].map(|i| rng.random_range(margin..dims[i] - margin))
}

fn quantize(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| *v as f32 as f64).collect()
}

struct Generated {
    record: ManifestRecord,
    mic: Vec<f64>,
    farend: Vec<f64>,
    target: Vec<f64>,
    echo: Vec<f64>,
    noise: Vec<f64>,
    agc_target: Vec<f64>,
    embedding: Vec<f64>,
}

fn speech_for(
    cfg: &SimulationConfig,
    pools: &Pools,
    speaker: &str,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    let len = cfg.len_samples();
    let candidates: Vec<&PathBuf> = pools.speech.iter().filter(|(s, _)| s == speaker).map(|(_, p)| p).collect();
    if candidates.is_empty() {
        return Ok(synth_speech(&Voice::for_speaker(speaker), len, cfg.sample_rate, rng.random()));
    }
    let path = candidates[rng.random_range(0..candidates.len())];
    let sig = load_wav(path)?;
    if sig.sample_rate() != cfg.sample_rate {
        return Err(Error::RateMismatch { expected: cfg.sample_rate, actual: sig.sample_rate() });
    }
    Ok(fit_length(sig.samples(), len, rng))
}

fn speakers(cfg: &SimulationConfig, pools: &Pools) -> Vec<String> {
    let mut ids: Vec<String> = pools.speech.iter().map(|(s, _)| s.clone()).collect();
    ids.dedup();
    if ids.len() < 2 {
        ids = (0..cfg.n_speakers).map(|i| format!("spk{i:03}")).collect();
    }
    ids
}

fn generate_item(cfg: &SimulationConfig, pools: &Pools, speakers: &[String], index: usize, seed: u64) -> Result<Generated> {
    let item_seed = splitmix64(seed.wrapping_add(index as u64));
    let mut rng = ChaCha8Rng::seed_from_u64(item_seed);
    let fs = cfg.sample_rate;
    let len = cfg.len_samples();

    let near = rng.random_range(0..speakers.len());
    let far = (near + rng.random_range(1..speakers.len())) % speakers.len();
    let speaker_id = speakers[near].clone();

    let mut s = speech_for(cfg, pools, &speaker_id, &mut rng)?;
    let level = db_to_amplitude(uniform(&mut rng, cfg.speech_level_dbfs));
    let s_rms = crate::signal::rms(&s);
    if s_rms <= 0.0 {
        return Err(Error::Silent("near-end speech"));
    }
    s.iter_mut().for_each(|v| *v *= level / s_rms);
    let x = speech_for(cfg, pools, &speakers[far], &mut rng)?;
    let v = if pools.noise.is_empty() {
        speech_shaped_noise(len, rng.random())
    } else {
        let path = &pools.noise[rng.random_range(0..pools.noise.len())];
        fit_length(load_wav(path)?.samples(), len, &mut rng)
    };

    let dims = [0, 1, 2].map(|i| uniform(&mut rng, [cfg.room_min[i], cfg.room_max[i]]));
    let room = RoomSpec {
        dimensions: dims,
        rt60: uniform(&mut rng, cfg.rt60),
        source_pos: random_point(&mut rng, dims, cfg.wall_margin),
        loudspeaker_pos: random_point(&mut rng, dims, cfg.wall_margin),
        noise_pos: random_point(&mut rng, dims, cfg.wall_margin),
        mic_pos: random_point(&mut rng, dims, cfg.wall_margin),
    };
    let distortion = DistortionSpec {
        kind: if rng.random_bool(cfg.distortion_prob) {
            if rng.random_bool(0.5) { DistortionKind::HardClip } else { DistortionKind::Sigmoid }
        } else {
            DistortionKind::None
        },
        clip_ratio: cfg.clip_ratio,
        sigmoid_gain: cfg.sigmoid_gain,
    };
    let delay = (uniform(&mut rng, cfg.bulk_delay_ms) * 1e-3 * fs as f64).round() as usize;
    let ser_db = uniform(&mut rng, cfg.ser_db);
    let snr_db = uniform(&mut rng, cfg.snr_db);

    // unit-gain direct path for each RIR keeps levels comparable across rooms
    let beta = calibrated_reflection(&room, room.source_pos, room.mic_pos, cfg.max_order, fs)?;
    let rir = |src: Point| -> Result<super::Rir> {
        let len = default_rir_len(&room, src, room.mic_pos, fs);
        let mut r = image_source_rir_len(&room, src, room.mic_pos, cfg.max_order, fs, len, beta)?;
        let onset = r.onset().expect("direct path present");
        let g = r.taps[onset];
        r.taps.iter_mut().for_each(|t| *t /= g);
        Ok(r)
    };
    let h_s = rir(room.source_pos)?;
    let h_x = rir(room.loudspeaker_pos)?;
    let h_v = rir(room.noise_pos)?;

    let s_sig = AudioSignal::new(s, fs)?;
    let x_sig = AudioSignal::new(x, fs)?;
    let s_r = convolve(&s_sig, &h_s)?;
    let emitted = apply_distortion(&x_sig, &distortion)?;
    let mut delayed = vec![0.0; len];
    let shift = delay.min(len);
    delayed[shift..].copy_from_slice(&emitted.samples()[..len - shift]);
    let x_r_raw = convolve(&AudioSignal::new(delayed, fs)?, &h_x)?;
    let v_r = convolve(&AudioSignal::new(v, fs)?, &h_v)?;
    let m = mix(&s_r, &x_r_raw, &v_r, ser_db, snr_db)?;

    let peak = m.y.samples().iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let scale = if peak > PEAK_LIMIT { PEAK_LIMIT / peak } else { 1.0 };
    let scaled = |x: &[f64]| -> Vec<f64> { x.iter().map(|v| v * scale).collect() };
    let target = quantize(&scaled(s_r.samples()));
    let echo = quantize(&scaled(m.x_r.samples()));
    let noise = quantize(&scaled(m.v.samples()));
    let mic = quantize(&sum3(&target, &echo, &noise));

    // dry target aligned to the direct-path arrival of the near-end talker
    let onset = h_s.onset().unwrap_or(0);
    let mut dry = vec![0.0; len];
    let shift = onset.min(len);
    for (d, s) in dry[shift..].iter_mut().zip(s_sig.samples()) {
        *d = s * scale;
    }
    let agc = reference_agc(&AudioSignal::new(dry, fs)?, cfg.agc.target_dbfs, cfg.agc.max_gain_db);

    let spk_vec = synth_speaker_embedding(&speaker_id, 0);
    let utterances: Vec<Vec<f64>> = (0..cfg.enroll_utterances)
        .map(|_| {
            spk_vec
                .iter()
                .map(|v| v + cfg.enroll_jitter / (EMBEDDING_DIM as f64).sqrt() * rng.sample::<f64, _>(rand_distr::StandardNormal))
                .collect()
        })
        .collect();
    let embedding = enroll_embedding(&utterances)?;

    let id = format!("item{index:05}");
    let name = |suffix: &str| format!("items/{id}_{suffix}");
    Ok(Generated {
        record: ManifestRecord {
            mic_path: name("mic.wav"),
            farend_path: name("farend.wav"),
            target_path: name("target.wav"),
            echo_path: name("echo.wav"),
            noise_path: name("noise.wav"),
            agc_target_path: name("agc.wav"),
            embedding_path: Some(name("emb.bin")),
            id,
            speaker_id,
            ser_db,
            snr_db,
            rt60: room.rt60,
            seed: item_seed,
        },
        mic,
        farend: quantize(x_sig.samples()),
        target,
        echo,
        noise,
        agc_target: quantize(agc.samples()),
        embedding,
    })
}

#[derive(Serialize)]
struct DatasetInfo<'a> {
    simulation: &'a SimulationConfig,
    n_items: usize,
    seed: u64,
}

/// Generates `n_items` mixtures under `out_dir` and writes the manifest and
/// the effective configuration. Output depends only on `(cfg, n_items, seed)`.
pub fn make_dataset(cfg: &SimulationConfig, n_items: usize, seed: u64, out_dir: &Path) -> Result<DatasetManifest> {
    cfg.validate()?;
    let pools = Pools::load(cfg)?;
    let speakers = speakers(cfg, &pools);
    std::fs::create_dir_all(out_dir).at(out_dir)?;
    if n_items > 0 {
        let items = out_dir.join("items");
        std::fs::create_dir_all(&items).at(&items)?;
    }
    let records = (0..n_items)
        .into_par_iter()
        .map(|i| {
            let g = generate_item(cfg, &pools, &speakers, i, seed)?;
            let fs = cfg.sample_rate;
            let rec = &g.record;
            for (rel, data) in [
                (&rec.mic_path, &g.mic),
                (&rec.farend_path, &g.farend),
                (&rec.target_path, &g.target),
                (&rec.echo_path, &g.echo),
                (&rec.noise_path, &g.noise),
                (&rec.agc_target_path, &g.agc_target),
            ] {
                save_wav(&AudioSignal::new(data.clone(), fs)?, &out_dir.join(rel))?;
            }
            if let Some(p) = &rec.embedding_path {
                write_embedding(&out_dir.join(p), &g.embedding)?;
            }
            Ok(g.record)
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = DatasetManifest { root: out_dir.to_path_buf(), records };
    manifest.write()?;
    let info = DatasetInfo { simulation: cfg, n_items, seed };
    let cfg_path = out_dir.join(CONFIG_FILE);
    let mut f = std::fs::File::create(&cfg_path).at(&cfg_path)?;
    f.write_all(serde_json::to_string_pretty(&info)?.as_bytes()).at(&cfg_path)?;
    Ok(manifest)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ItemCheck {
    pub id: String,
    /// Largest `|y − (s_r + x_r + v)|` over samples.
    pub mix_error: f64,
    pub ser_error_db: f64,
    pub snr_error_db: f64,
    pub passed: bool,
}

/// Recomputes the mixing identity and level ratios from the stored WAVs.
pub fn verify_dataset(manifest: &DatasetManifest, mix_tol: f64, ratio_tol_db: f64) -> Result<Vec<ItemCheck>> {
    manifest
        .records
        .par_iter()
        .map(|rec| {
            let item = manifest.load_item(rec)?;
            let sum = sum3(item.target.samples(), item.echo.samples(), item.noise.samples());
            let mix_error = item
                .mic
                .samples()
                .iter()
                .zip(&sum)
                .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            let ser_error_db = (ratio_db(item.target.samples(), item.echo.samples()) - rec.ser_db).abs();
            let snr_error_db = (ratio_db(item.target.samples(), item.noise.samples()) - rec.snr_db).abs();
            Ok(ItemCheck {
                id: rec.id.clone(),
                passed: mix_error < mix_tol && ser_error_db <= ratio_tol_db && snr_error_db <= ratio_tol_db,
                mix_error,
                ser_error_db,
                snr_error_db,
            })
        })
        .collect()
}
