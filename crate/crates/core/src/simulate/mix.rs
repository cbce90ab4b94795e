use num_complex::Complex64;
use rustfft::FftPlanner;

use super::Rir;
use crate::error::{Error, Result};
use crate::signal::{rms, AudioSignal};

/// Signals below this RMS have no usable level.
pub const SILENCE_RMS: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct Mixture {
    pub y: AudioSignal,
    pub x_r: AudioSignal,
    pub v: AudioSignal,
}

/// Linear convolution truncated to the input length, computed via FFT.
pub fn convolve(x: &AudioSignal, rir: &Rir) -> Result<AudioSignal> {
    if rir.sample_rate != x.sample_rate() {
        return Err(Error::RateMismatch {
            expected: x.sample_rate(),
            actual: rir.sample_rate,
        });
    }
    let n = x.len();
    if n == 0 || rir.taps.is_empty() {
        return Ok(AudioSignal::zeros(n, x.sample_rate()));
    }
    let size = (n + rir.taps.len() - 1).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(size);
    let inv = planner.plan_fft_inverse(size);
    let pad = |v: &[f64]| {
        let mut b = vec![Complex64::new(0.0, 0.0); size];
        for (d, s) in b.iter_mut().zip(v) {
            d.re = *s;
        }
        b
    };
    let mut a = pad(x.samples());
    let mut b = pad(&rir.taps);
    fwd.process(&mut a);
    fwd.process(&mut b);
    for (p, q) in a.iter_mut().zip(&b) {
        *p *= q;
    }
    inv.process(&mut a);
    let scale = 1.0 / size as f64;
    AudioSignal::new(a[..n].iter().map(|c| c.re * scale).collect(), x.sample_rate())
}

/// Gain that puts `other` at `ratio_db` below `reference` in power.
pub fn level_gain(reference: &[f64], other: &[f64], ratio_db: f64) -> f64 {
    rms(reference) / rms(other) * 10f64.powf(-ratio_db / 20.0)
}

/// Scales echo and noise to the requested SER and SNR (both measured
/// against `s_r`) and sums the microphone signal.
pub fn mix(s_r: &AudioSignal, x_r_raw: &AudioSignal, v_raw: &AudioSignal, ser_db: f64, snr_db: f64) -> Result<Mixture> {
    let len = s_r.len();
    if x_r_raw.len() != len || v_raw.len() != len {
        return Err(Error::Shape(format!(
            "component lengths differ: target {len}, echo {}, noise {}",
            x_r_raw.len(),
            v_raw.len()
        )));
    }
    for (name, sig) in [("target", s_r), ("echo", x_r_raw), ("noise", v_raw)] {
        if rms(sig.samples()) <= SILENCE_RMS {
            return Err(Error::Silent(name));
        }
    }
    let alpha = level_gain(s_r.samples(), x_r_raw.samples(), ser_db);
    let beta = level_gain(s_r.samples(), v_raw.samples(), snr_db);
    let rate = s_r.sample_rate();
    let x_r: Vec<f64> = x_r_raw.samples().iter().map(|v| v * alpha).collect();
    let v: Vec<f64> = v_raw.samples().iter().map(|n| n * beta).collect();
    let y = sum3(s_r.samples(), &x_r, &v);
    Ok(Mixture {
        y: AudioSignal::new(y, rate)?,
        x_r: AudioSignal::new(x_r, rate)?,
        v: AudioSignal::new(v, rate)?,
    })
}

/// `(s + x) + v`, the fixed summation order used everywhere.
pub fn sum3(s: &[f64], x: &[f64], v: &[f64]) -> Vec<f64> {
    s.iter().zip(x).zip(v).map(|((a, b), c)| (a + b) + c).collect()
}

/// `10·log10(P(a)/P(b))`.
pub fn ratio_db(a: &[f64], b: &[f64]) -> f64 {
    20.0 * (rms(a) / rms(b)).log10()
}
