//! Synthetic speech-like and noise signals used when no recorded pools are
//! configured.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::embedding::hash_seed;

/// Approximate (F1, F2, F3) formant frequencies in Hz for a few vowels.
const VOWELS: [[f64; 3]; 6] = [
    [730.0, 1090.0, 2440.0],
    [270.0, 2290.0, 3010.0],
    [530.0, 1840.0, 2480.0],
    [570.0, 840.0, 2410.0],
    [300.0, 870.0, 2240.0],
    [660.0, 1720.0, 2410.0],
];

/// Voice characteristics of a synthetic talker.
#[derive(Clone, Debug, PartialEq)]
pub struct Voice {
    pub f0: f64,
    pub formant_scale: f64,
    pub brightness: f64,
}

impl Voice {
    /// Deterministic voice for a speaker identifier.
    pub fn for_speaker(speaker_id: &str) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(hash_seed(speaker_id, 0x76_6f69_6365));
        Self {
            f0: rng.random_range(90.0..240.0),
            formant_scale: rng.random_range(0.85..1.2),
            brightness: rng.random_range(0.6..1.0),
        }
    }
}

fn formant_gain(f: f64, formants: &[f64; 3], scale: f64) -> f64 {
    formants
        .iter()
        .enumerate()
        .map(|(i, fc)| {
            let fc = fc * scale;
            let bw = 80.0 + 40.0 * i as f64;
            let w = 1.0 / (i as f64 + 1.0);
            w / (1.0 + ((f - fc) / bw).powi(2))
        })
        .sum()
}

/// Syllable-structured harmonic speech: voiced segments with gliding pitch
/// and vowel formants, separated by pauses and short fricative bursts.
pub fn synth_speech(voice: &Voice, len: usize, sample_rate: u32, seed: u64) -> Vec<f64> {
    let fs = sample_rate as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![0.0; len];
    let mut pos = (rng.random_range(0.0..0.08) * fs) as usize;
    while pos < len {
        if rng.random_bool(0.25) {
            // unvoiced burst: differenced noise gives a high-tilted spectrum
            let dur = (rng.random_range(0.04..0.1) * fs) as usize;
            let mut prev = 0.0;
            for i in 0..dur.min(len - pos) {
                let n: f64 = StandardNormal.sample(&mut rng);
                let env = (PI * i as f64 / dur as f64).sin();
                out[pos + i] += 0.15 * voice.brightness * env * (n - prev);
                prev = n;
            }
            pos += dur;
        }
        let dur = (rng.random_range(0.12..0.3) * fs) as usize;
        let vowel = VOWELS[rng.random_range(0..VOWELS.len())];
        let f_start = voice.f0 * rng.random_range(0.85..1.15);
        let f_end = voice.f0 * rng.random_range(0.8..1.2);
        let amp = rng.random_range(0.5..1.0);
        let harmonics = ((0.45 * fs) / f_start.max(f_end)).floor() as usize;
        let gains: Vec<f64> = (1..=harmonics)
            .map(|h| formant_gain(h as f64 * voice.f0, &vowel, voice.formant_scale) / (h as f64).sqrt())
            .collect();
        let mut phase = 0.0;
        for i in 0..dur.min(len.saturating_sub(pos)) {
            let t = i as f64 / dur as f64;
            let f0 = f_start + (f_end - f_start) * t;
            phase += 2.0 * PI * f0 / fs;
            let env = (PI * t).sin().powf(0.6);
            let v: f64 = gains.iter().enumerate().map(|(h, g)| g * ((h + 1) as f64 * phase).sin()).sum();
            out[pos + i] += amp * env * v;
        }
        pos += dur + (rng.random_range(0.03..0.15) * fs) as usize;
    }
    normalize_rms(&mut out, 0.1);
    out
}

/// Stationary noise with a speech-like low-pass tilt.
pub fn speech_shaped_noise(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut a, mut b) = (0.0, 0.0);
    let mut out: Vec<f64> = (0..len)
        .map(|_| {
            let n: f64 = StandardNormal.sample(&mut rng);
            // two cascaded one-pole low-pass sections
            a = 0.7 * a + n;
            b = 0.4 * b + a;
            b
        })
        .collect();
    normalize_rms(&mut out, 0.1);
    out
}

fn normalize_rms(x: &mut [f64], target: f64) {
    let r = crate::signal::rms(x);
    if r > 0.0 {
        x.iter_mut().for_each(|v| *v *= target / r);
    }
}
