use serde::{Deserialize, Serialize};

use crate::signal::{rms, AudioSignal};

const FRAME: usize = 512;
const HOP: usize = 256;
const ATTACK: f64 = 0.5;
const RELEASE: f64 = 0.05;
const SILENT_RMS: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AgcConfig {
    /// Target RMS level in dB relative to full scale (amplitude 1.0).
    pub target_dbfs: f64,
    pub max_gain_db: f64,
}

impl Default for AgcConfig {
    fn default() -> Self {
        Self {
            target_dbfs: -20.0,
            max_gain_db: 30.0,
        }
    }
}

pub fn db_to_amplitude(db: f64) -> f64 {
    10f64.powf(db / 20.0)
}

/// Per-frame gains from a one-pole RMS tracker (fast attack, slow release).
pub fn agc_frame_gains(samples: &[f64], target_dbfs: f64, max_gain_db: f64) -> Vec<f64> {
    let target = db_to_amplitude(target_dbfs);
    let max_gain = db_to_amplitude(max_gain_db);
    let frames = if samples.is_empty() { 0 } else { samples.len().saturating_sub(1) / HOP + 1 };
    let mut env: Option<f64> = None;
    let mut gain = 1.0;
    let mut gains = Vec::with_capacity(frames);
    for n in 0..frames {
        let start = n * HOP;
        let level = rms(&samples[start..(start + FRAME).min(samples.len())]);
        if level >= SILENT_RMS {
            let e = match env {
                None => level,
                Some(e) => {
                    let coeff = if level > e { ATTACK } else { RELEASE };
                    e + coeff * (level - e)
                }
            };
            env = Some(e);
            gain = (target / e).min(max_gain);
        }
        gains.push(gain);
    }
    gains
}

/// Reference automatic gain control: frame gains linearly interpolated
/// between frame centres and applied samplewise.
pub fn reference_agc(s: &AudioSignal, target_dbfs: f64, max_gain_db: f64) -> AudioSignal {
    let x = s.samples();
    let gains = agc_frame_gains(x, target_dbfs, max_gain_db);
    let centre = |n: usize| (n * HOP + FRAME / 2) as f64;
    let out = x
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let t = i as f64;
            let g = if gains.len() == 1 || t <= centre(0) {
                gains[0]
            } else {
                let n = ((t - centre(0)) / HOP as f64).floor() as usize;
                if n + 1 >= gains.len() {
                    gains[gains.len() - 1]
                } else {
                    let w = (t - centre(n)) / HOP as f64;
                    gains[n] * (1.0 - w) + gains[n + 1] * w
                }
            };
            v * g
        })
        .collect();
    AudioSignal::new(out, s.sample_rate()).expect("finite gains")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::rms_db;

    fn tone(level_dbfs: f64) -> AudioSignal {
        let amp = db_to_amplitude(level_dbfs) * 2f64.sqrt();
        let x = (0..32000).map(|i| amp * (i as f64 * 0.1).sin()).collect();
        AudioSignal::new(x, 16000).unwrap()
    }

    #[test]
    fn fixed_point_at_target() {
        let out = reference_agc(&tone(-20.0), -20.0, 30.0);
        assert!((rms_db(out.samples()) - -20.0).abs() < 0.5);
    }

    #[test]
    fn quiet_input_saturates() {
        let out = reference_agc(&tone(-60.0), -20.0, 30.0);
        assert!((rms_db(out.samples()) - -30.0).abs() < 0.5);
    }

    #[test]
    fn silence_passes_through() {
        let z = AudioSignal::zeros(1000, 16000);
        assert_eq!(reference_agc(&z, -20.0, 30.0), z);
        assert!(reference_agc(&AudioSignal::zeros(0, 16000), -20.0, 30.0).is_empty());
    }
}
