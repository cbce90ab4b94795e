use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Speed of sound in m/s.
pub const SPEED_OF_SOUND: f64 = 343.0;

pub type Point = [f64; 3];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoomSpec {
    /// Shoebox dimensions in meters.
    pub dimensions: Point,
    /// Reverberation time in seconds.
    pub rt60: f64,
    pub source_pos: Point,
    pub loudspeaker_pos: Point,
    pub noise_pos: Point,
    pub mic_pos: Point,
}

impl RoomSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dimensions.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
            return Err(Error::InvalidArgument(format!("room dimensions {:?} must be positive", self.dimensions)));
        }
        if !(self.rt60.is_finite() && self.rt60 >= 0.0) {
            return Err(Error::InvalidArgument(format!("rt60 {} must be non-negative", self.rt60)));
        }
        for (name, p) in [
            ("source", self.source_pos),
            ("loudspeaker", self.loudspeaker_pos),
            ("noise", self.noise_pos),
            ("mic", self.mic_pos),
        ] {
            self.check_inside(name, p)?;
        }
        Ok(())
    }

    pub fn check_inside(&self, name: &str, p: Point) -> Result<()> {
        if p.iter().zip(&self.dimensions).any(|(c, d)| !(*c > 0.0 && c < d)) {
            return Err(Error::InvalidArgument(format!(
                "{name} position {p:?} is not strictly inside room {:?}",
                self.dimensions
            )));
        }
        Ok(())
    }

    pub fn volume(&self) -> f64 {
        self.dimensions.iter().product()
    }

    pub fn surface(&self) -> f64 {
        let [x, y, z] = self.dimensions;
        2.0 * (x * y + x * z + y * z)
    }

    /// Uniform wall reflection coefficient from Sabine's formula; zero when
    /// the requested decay needs more absorption than a wall can provide.
    pub fn reflection_coefficient(&self) -> f64 {
        if self.rt60 <= 0.0 {
            return 0.0;
        }
        let alpha = 0.1611 * self.volume() / (self.surface() * self.rt60);
        (1.0 - alpha.min(1.0)).sqrt()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Rir {
    pub taps: Vec<f64>,
    pub sample_rate: u32,
}

impl Rir {
    /// Index of the first non-zero tap.
    pub fn onset(&self) -> Option<usize> {
        self.taps.iter().position(|t| *t != 0.0)
    }
}

fn distance(a: Point, b: Point) -> f64 {
    a.iter().zip(&b).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt()
}

/// Default RIR length: direct path plus 1.2·rt60.
pub fn default_rir_len(room: &RoomSpec, src: Point, mic: Point, sample_rate: u32) -> usize {
    let direct = (distance(src, mic) * sample_rate as f64 / SPEED_OF_SOUND).round() as usize;
    direct + 1 + (1.2 * room.rt60 * sample_rate as f64).ceil() as usize
}

/// Shoebox image-source RIR of [`default_rir_len`] taps using
/// [`calibrated_reflection`].
pub fn image_source_rir(room: &RoomSpec, src: Point, mic: Point, max_order: usize, sample_rate: u32) -> Result<Rir> {
    let beta = calibrated_reflection(room, src, mic, max_order, sample_rate)?;
    let len = default_rir_len(room, src, mic, sample_rate);
    image_source_rir_len(room, src, mic, max_order, sample_rate, len, beta)
}

/// Iterations of the decay calibration in [`calibrated_reflection`].
const CALIBRATION_ITERS: usize = 8;

/// Reflection coefficient whose image-source decay matches `room.rt60`.
///
/// Starts from the Sabine coefficient and rescales `ln β` by the ratio of
/// measured (Schroeder) to requested T60. Specular images in a shoebox
/// decay more slowly than the diffuse-field Sabine model predicts, since
/// near-axial paths meet few walls; this removes that bias.
pub fn calibrated_reflection(room: &RoomSpec, src: Point, mic: Point, max_order: usize, sample_rate: u32) -> Result<f64> {
    let sabine = room.reflection_coefficient();
    if sabine == 0.0 {
        return Ok(0.0);
    }
    let len = default_rir_len(room, src, mic, sample_rate);
    let mut log_beta = sabine.ln();
    let mut best = (f64::INFINITY, sabine);
    for _ in 0..CALIBRATION_ITERS {
        let beta = log_beta.exp();
        let rir = image_source_rir_len(room, src, mic, max_order, sample_rate, len, beta)?;
        let Some(t60) = schroeder_t60(&rir.taps, sample_rate) else { break };
        let err = (t60 / room.rt60 - 1.0).abs();
        if err < best.0 {
            best = (err, beta);
        }
        if err < 0.01 {
            break;
        }
        log_beta *= t60 / room.rt60;
    }
    Ok(best.1)
}

/// Image-source RIR with `β^order / (4πd)` taps at `round(d·fs/c)`.
/// Images whose delay falls beyond `len` are dropped.
pub fn image_source_rir_len(
    room: &RoomSpec,
    src: Point,
    mic: Point,
    max_order: usize,
    sample_rate: u32,
    len: usize,
    beta: f64,
) -> Result<Rir> {
    room.validate()?;
    room.check_inside("source", src)?;
    room.check_inside("mic", mic)?;
    if !(0.0..1.0).contains(&beta) {
        return Err(Error::InvalidArgument(format!("reflection coefficient {beta} must be in [0, 1)")));
    }
    let fs = sample_rate as f64;
    let mut taps = vec![0.0; len];
    let max_dist = len as f64 * SPEED_OF_SOUND / fs;
    let order = if beta == 0.0 { 0 } else { max_order as i64 };

    // Per-axis images: coordinate offset relative to the mic and reflection count.
    let axis_images = |axis: usize| -> Vec<(f64, i64)> {
        let l = room.dimensions[axis];
        let reach = (max_dist / (2.0 * l)).ceil() as i64 + 1;
        let mut out = Vec::new();
        for n in -reach..=reach {
            for p in 0..2i64 {
                let refl = (n - p).abs() + n.abs();
                if refl > order {
                    continue;
                }
                let coord = (1 - 2 * p) as f64 * src[axis] + 2.0 * n as f64 * l;
                let off = coord - mic[axis];
                if off.abs() <= max_dist {
                    out.push((off, refl));
                }
            }
        }
        out
    };
    let (ix, iy, iz) = (axis_images(0), axis_images(1), axis_images(2));
    for &(dx, rx) in &ix {
        for &(dy, ry) in &iy {
            if rx + ry > order || dx * dx + dy * dy > max_dist * max_dist {
                continue;
            }
            for &(dz, rz) in &iz {
                let refl = rx + ry + rz;
                if refl > order {
                    continue;
                }
                let d = (dx * dx + dy * dy + dz * dz).sqrt();
                let delay = (d * fs / SPEED_OF_SOUND).round() as usize;
                if delay < len {
                    taps[delay] += beta.powi(refl as i32) / (4.0 * std::f64::consts::PI * d.max(1e-3));
                }
            }
        }
    }
    Ok(Rir { taps, sample_rate })
}

/// Unit direct tap followed by Gaussian noise under a 60 dB-per-rt60
/// exponential envelope.
pub fn synthetic_decay_rir(rt60: f64, len: usize, seed: u64, sample_rate: u32) -> Result<Rir> {
    if !(rt60.is_finite() && rt60 >= 0.0) {
        return Err(Error::InvalidArgument(format!("rt60 {rt60} must be non-negative")));
    }
    let mut taps = vec![0.0; len.max(1)];
    taps[0] = 1.0;
    if rt60 > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fs = sample_rate as f64;
        for (i, t) in taps.iter_mut().enumerate().skip(1) {
            let n: f64 = StandardNormal.sample(&mut rng);
            *t = 0.1 * n * (-6.908 * i as f64 / fs / rt60).exp();
        }
    }
    Ok(Rir { taps, sample_rate })
}

/// Schroeder backward-integrated energy decay curve in dB (0 dB at start).
pub fn energy_decay_db(taps: &[f64]) -> Vec<f64> {
    let mut edc: Vec<f64> = taps.iter().map(|t| t * t).collect();
    for i in (0..edc.len().saturating_sub(1)).rev() {
        edc[i] += edc[i + 1];
    }
    let total = edc.first().copied().unwrap_or(0.0);
    edc.iter().map(|e| 10.0 * (e / total).log10()).collect()
}

/// T60 extrapolated from a least-squares line fit to the energy decay
/// curve between −5 and −25 dB.
pub fn schroeder_t60(taps: &[f64], sample_rate: u32) -> Option<f64> {
    let edc = energy_decay_db(taps);
    let pts: Vec<(f64, f64)> = edc
        .iter()
        .enumerate()
        .filter(|(_, e)| **e <= -5.0 && **e >= -25.0)
        .map(|(i, e)| (i as f64 / sample_rate as f64, *e))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let slope = sxy / sxx;
    (slope < 0.0).then(|| -60.0 / slope)
}
