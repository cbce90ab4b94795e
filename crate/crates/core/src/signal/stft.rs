use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::AudioSignal;
use crate::error::{Error, Result};

/// Overlap-add normalizations below this are treated as zero coverage.
const NORM_EPSILON: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Window {
    /// Periodic Hann window.
    #[default]
    Hann,
}

impl Window {
    pub fn coefficients(self, len: usize) -> Vec<f64> {
        match self {
            Window::Hann => (0..len)
                .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / len as f64).cos())
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StftConfig {
    pub fft_size: usize,
    pub hop: usize,
    pub window: Window,
    pub sample_rate: u32,
}

impl Default for StftConfig {
    /// 512-point FFT with a 32 ms Hann window and 16 ms hop at 16 kHz.
    fn default() -> Self {
        Self {
            fft_size: 512,
            hop: 256,
            window: Window::Hann,
            sample_rate: 16000,
        }
    }
}

impl StftConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.fft_size.is_power_of_two() || self.fft_size < 2 {
            return Err(Error::Config(format!("fft_size {} must be a power of two", self.fft_size)));
        }
        if self.hop == 0 || self.hop > self.fft_size {
            return Err(Error::Config(format!("hop {} must be in 1..={}", self.hop, self.fft_size)));
        }
        if self.sample_rate == 0 {
            return Err(Error::Config("sample_rate must be positive".into()));
        }
        Ok(())
    }

    /// One-sided bin count, `fft_size/2 + 1`.
    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// Frame count for a signal of `len` samples with centered frames.
    pub fn frames_for(&self, len: usize) -> usize {
        len / self.hop + 1
    }

    fn pad(&self) -> usize {
        self.fft_size / 2
    }
}

/// Complex one-sided STFT, stored frame-major: entry `(k, n)` lives at
/// `n * bins + k`.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrogram {
    config: StftConfig,
    frames: usize,
    /// length of the signal the frames were computed from
    signal_len: usize,
    data: Vec<Complex64>,
}

impl Spectrogram {
    pub fn new(config: StftConfig, frames: usize, signal_len: usize, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != frames * config.bins() {
            return Err(Error::Shape(format!(
                "{} values for {frames} frames x {} bins",
                data.len(),
                config.bins()
            )));
        }
        if data.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(Error::InvalidSignal("non-finite spectrogram entry".into()));
        }
        Ok(Self {
            config,
            frames,
            signal_len,
            data,
        })
    }

    pub fn zeros(config: StftConfig, signal_len: usize) -> Self {
        let frames = config.frames_for(signal_len);
        Self {
            data: vec![Complex64::new(0.0, 0.0); frames * config.bins()],
            config,
            frames,
            signal_len,
        }
    }

    pub fn config(&self) -> &StftConfig {
        &self.config
    }

    pub fn bins(&self) -> usize {
        self.config.bins()
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn signal_len(&self) -> usize {
        self.signal_len
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn get(&self, k: usize, n: usize) -> Complex64 {
        self.data[n * self.bins() + k]
    }

    pub fn frame(&self, n: usize) -> &[Complex64] {
        let f = self.bins();
        &self.data[n * f..(n + 1) * f]
    }

    pub fn same_shape(&self, other: &Spectrogram) -> bool {
        self.frames == other.frames && self.bins() == other.bins()
    }

    pub fn map(&self, f: impl Fn(Complex64) -> Complex64) -> Self {
        Self {
            data: self.data.iter().map(|&c| f(c)).collect(),
            ..self.clone()
        }
    }

    /// Interleaved `[re, im]` pairs in frame-major order (`[T, F, 2]`).
    pub fn to_interleaved(&self) -> Vec<f64> {
        self.data.iter().flat_map(|c| [c.re, c.im]).collect()
    }

    pub fn from_interleaved(config: StftConfig, frames: usize, signal_len: usize, values: &[f64]) -> Result<Self> {
        let data = values.chunks_exact(2).map(|c| Complex64::new(c[0], c[1])).collect();
        Self::new(config, frames, signal_len, data)
    }
}

/// Short-time Fourier transform with centered frames: the signal is
/// zero-padded by `fft_size/2` on both sides and frame `n` starts at
/// padded sample `n·hop`.
pub fn stft(signal: &AudioSignal, cfg: &StftConfig) -> Result<Spectrogram> {
    cfg.validate()?;
    if signal.sample_rate() != cfg.sample_rate {
        return Err(Error::RateMismatch {
            expected: cfg.sample_rate,
            actual: signal.sample_rate(),
        });
    }
    let n_fft = cfg.fft_size;
    let bins = cfg.bins();
    let pad = cfg.pad();
    let frames = cfg.frames_for(signal.len());
    let window = cfg.window.coefficients(n_fft);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n_fft);
    let x = signal.samples();

    let mut data = Vec::with_capacity(frames * bins);
    let mut buf = vec![Complex64::new(0.0, 0.0); n_fft];
    for n in 0..frames {
        for (i, b) in buf.iter_mut().enumerate() {
            let p = n * cfg.hop + i;
            let v = if p >= pad && p - pad < x.len() { x[p - pad] } else { 0.0 };
            *b = Complex64::new(v * window[i], 0.0);
        }
        fft.process(&mut buf);
        data.extend_from_slice(&buf[..bins]);
    }
    Spectrogram::new(cfg.clone(), frames, signal.len(), data)
}

/// Per-sample normalization `Σ_n w²[i − n·hop]` over the padded signal.
fn window_power_sum(cfg: &StftConfig, frames: usize, window: &[f64]) -> Vec<f64> {
    let total = (frames.saturating_sub(1)) * cfg.hop + cfg.fft_size;
    let mut norm = vec![0.0; total];
    for n in 0..frames {
        for (i, w) in window.iter().enumerate() {
            norm[n * cfg.hop + i] += w * w;
        }
    }
    norm
}

/// Weighted overlap-add of time-domain frames (`frames × fft_size`) with
/// the synthesis window and squared-window normalization; returns the
/// central `signal_len` samples.
pub fn overlap_add(cfg: &StftConfig, frames: &[Vec<f64>], signal_len: usize) -> Vec<f64> {
    let window = cfg.window.coefficients(cfg.fft_size);
    let norm = window_power_sum(cfg, frames.len(), &window);
    let mut acc = vec![0.0; norm.len()];
    for (n, frame) in frames.iter().enumerate() {
        for (i, (v, w)) in frame.iter().zip(&window).enumerate() {
            acc[n * cfg.hop + i] += v * w;
        }
    }
    let pad = cfg.pad();
    (0..signal_len)
        .map(|i| {
            let p = i + pad;
            match (acc.get(p), norm.get(p)) {
                (Some(&a), Some(&z)) if z > NORM_EPSILON => a / z,
                _ => 0.0,
            }
        })
        .collect()
}

/// Inverse STFT by weighted overlap-add, returning the original length.
pub fn istft(spec: &Spectrogram) -> AudioSignal {
    let cfg = spec.config();
    let n_fft = cfg.fft_size;
    let bins = cfg.bins();
    let ifft = FftPlanner::<f64>::new().plan_fft_inverse(n_fft);
    let mut buf = vec![Complex64::new(0.0, 0.0); n_fft];
    let scale = 1.0 / n_fft as f64;
    let frames: Vec<Vec<f64>> = (0..spec.frames())
        .map(|n| {
            let half = spec.frame(n);
            buf[..bins].copy_from_slice(half);
            for k in bins..n_fft {
                buf[k] = half[n_fft - k].conj();
            }
            ifft.process(&mut buf);
            buf.iter().map(|c| c.re * scale).collect()
        })
        .collect();
    let samples = overlap_add(cfg, &frames, spec.signal_len());
    AudioSignal::new(samples, cfg.sample_rate).expect("finite by construction")
}

/// Adjoint of [`istft`]: maps dL/d(samples) to dL/d(spectrum) as
/// interleaved `[re, im]` pairs in frame-major order.
pub fn istft_adjoint(cfg: &StftConfig, frames: usize, grad: &[f64]) -> Vec<f64> {
    let n_fft = cfg.fft_size;
    let bins = cfg.bins();
    let pad = cfg.pad();
    let window = cfg.window.coefficients(n_fft);
    let norm = window_power_sum(cfg, frames, &window);
    // gradient with respect to the padded, normalized accumulator
    let mut gacc = vec![0.0; norm.len()];
    for (i, &g) in grad.iter().enumerate() {
        let p = i + pad;
        if p < norm.len() && norm[p] > NORM_EPSILON {
            gacc[p] = g / norm[p];
        }
    }
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n_fft);
    let mut buf = vec![Complex64::new(0.0, 0.0); n_fft];
    let mut out = Vec::with_capacity(frames * bins * 2);
    for n in 0..frames {
        for (i, b) in buf.iter_mut().enumerate() {
            *b = Complex64::new(gacc[n * cfg.hop + i] * window[i], 0.0);
        }
        fft.process(&mut buf);
        for (k, c) in buf.iter().take(bins).enumerate() {
            // x_i = (1/N) Σ_k c_k (Re S_k cos θ − Im S_k sin θ), c_k = 1 at DC/Nyquist, else 2
            let ck = if k == 0 || k == n_fft / 2 { 1.0 } else { 2.0 };
            let s = ck / n_fft as f64;
            out.push(s * c.re);
            out.push(if k == 0 || k == n_fft / 2 { 0.0 } else { s * c.im });
        }
    }
    out
}
