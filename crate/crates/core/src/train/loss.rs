use neuralecho_nn::{Graph, Var};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ops::{clamp_si_sdr, l1_op, magnitude, si_sdr_op, si_sdr_raw};
use crate::model::{ForwardVars, ModelConfig};
use crate::signal::{stft, AudioSignal, Spectrogram};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    /// Weight of the L1 magnitude term.
    pub alpha: f64,
    /// Adds the post-AGC magnitude loss.
    pub agc_task: bool,
    /// Share of the post-AGC loss: `(1 − w)·L_pre + w·L_agc`.
    pub multitask_weight: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { alpha: 0.1, agc_task: false, multitask_weight: 0.5 }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(Error::Config(format!("alpha must be finite and non-negative, got {}", self.alpha)));
        }
        if !(self.multitask_weight.is_finite() && (0.0..=1.0).contains(&self.multitask_weight)) {
            return Err(Error::Config(format!(
                "multitask_weight must lie in [0, 1], got {}",
                self.multitask_weight
            )));
        }
        Ok(())
    }
}

/// Scale-invariant SDR in dB, clamped to ±60.
pub fn si_sdr(est: &AudioSignal, reference: &AudioSignal) -> Result<f64> {
    if est.len() != reference.len() {
        return Err(Error::Shape(format!(
            "estimate has {} samples, reference {}",
            est.len(),
            reference.len()
        )));
    }
    let raw = si_sdr_raw(est.samples(), reference.samples()).ok_or(Error::Silent("reference"))?;
    Ok(clamp_si_sdr(raw))
}

/// Mean over bins of `| |a| − |b| |`.
pub fn l1_mag(a: &Spectrogram, b: &Spectrogram) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::Shape(format!(
            "{}x{} vs {}x{} spectrograms",
            a.frames(),
            a.bins(),
            b.frames(),
            b.bins()
        )));
    }
    let n = a.data().len().max(1) as f64;
    Ok(a.data().iter().zip(b.data()).map(|(x, y)| (x.norm() - y.norm()).abs()).sum::<f64>() / n)
}

/// Mean L1 between predicted post-AGC magnitudes (`[T, F]`, frame-major)
/// and the magnitude of `target`'s STFT.
pub fn agc_loss(pred: &[f64], target: &Spectrogram) -> Result<f64> {
    if pred.len() != target.data().len() {
        return Err(Error::Shape(format!("{} magnitudes for {} bins", pred.len(), target.data().len())));
    }
    let n = pred.len().max(1) as f64;
    Ok(pred.iter().zip(target.data()).map(|(p, t)| (p - t.norm()).abs()).sum::<f64>() / n)
}

/// Reference signals for one training utterance.
#[derive(Clone, Debug)]
pub struct LossTarget {
    /// `s_r`.
    pub target: Vec<f64>,
    /// `|S_r|`, frame-major `[T, F]`.
    pub target_mag: Vec<f64>,
    /// `|stft(A(s))|`, when the AGC task is active.
    pub agc_mag: Option<Vec<f64>>,
}

impl LossTarget {
    pub fn prepare(cfg: &ModelConfig, target: &AudioSignal, agc_target: Option<&AudioSignal>) -> Result<Self> {
        let mags = |s: &AudioSignal| -> Result<Vec<f64>> {
            Ok(stft(s, &cfg.stft)?.data().iter().map(|c| c.norm()).collect())
        };
        if let Some(a) = agc_target {
            if a.len() != target.len() {
                return Err(Error::Shape(format!(
                    "AGC target has {} samples, target {}",
                    a.len(),
                    target.len()
                )));
            }
        }
        Ok(Self {
            target: target.samples().to_vec(),
            target_mag: mags(target)?,
            agc_mag: agc_target.map(mags).transpose()?,
        })
    }
}

/// Graph handles of the loss and its terms.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub total: Var,
    /// Clamped SI-SDR of `ŝ_r` in dB (the loss uses its negation).
    pub si_sdr: Var,
    pub l1: Var,
    pub agc: Option<Var>,
}

/// `−SI-SDR(ŝ_r, s_r) + α·l1(|Ŝ_r|, |S_r|)`, mixed with the post-AGC loss
/// when `cfg.agc_task` is set.
pub fn neuralecho_loss(g: &mut Graph, vars: &ForwardVars, target: &LossTarget, cfg: &LossConfig) -> Result<LossTerms> {
    let sdr = si_sdr_op(g, vars.enhanced, &target.target)?;
    let mag = magnitude(g, vars.enhanced_spec)?;
    let l1 = l1_op(g, mag, &target.target_mag)?;
    let neg = g.scale(sdr, -1.0)?;
    let weighted = g.scale(l1, cfg.alpha)?;
    let pre = g.add(neg, weighted)?;
    if !cfg.agc_task {
        return Ok(LossTerms { total: pre, si_sdr: sdr, l1, agc: None });
    }
    let (Some(pred), Some(agc_mag)) = (vars.agc_mag, target.agc_mag.as_deref()) else {
        return Err(Error::Config("the AGC task needs a model with the AGC branch and an AGC target".into()));
    };
    let agc = l1_op(g, pred, agc_mag)?;
    let w = cfg.multitask_weight;
    let pre = g.scale(pre, 1.0 - w)?;
    let post = g.scale(agc, w)?;
    let total = g.add(pre, post)?;
    Ok(LossTerms { total, si_sdr: sdr, l1, agc: Some(agc) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;

    #[test]
    fn si_sdr_is_scale_invariant() {
        let s = AudioSignal::new((0..500).map(|i| (i as f64 * 0.1).sin()).collect(), 16000).unwrap();
        let e = AudioSignal::new(
            s.samples().iter().enumerate().map(|(i, v)| v + 0.1 * (i as f64 * 0.37).cos()).collect(),
            16000,
        )
        .unwrap();
        let base = si_sdr(&e, &s).unwrap();
        for c in [0.1, 1.0, 10.0] {
            let scaled = AudioSignal::new(e.samples().iter().map(|v| v * c).collect(), 16000).unwrap();
            assert!((si_sdr(&scaled, &s).unwrap() - base).abs() < 1e-6);
        }
        assert_eq!(si_sdr(&s, &s).unwrap(), 60.0);
    }

    #[test]
    fn l1_mag_trivial_cases() {
        let cfg = crate::signal::StftConfig::default();
        let ones = Spectrogram::new(cfg.clone(), 2, 256, vec![Complex64::new(0.0, 1.0); 2 * 257]).unwrap();
        let zero = Spectrogram::zeros(cfg, 256);
        assert_eq!(l1_mag(&ones, &ones).unwrap(), 0.0);
        assert_eq!(l1_mag(&zero, &ones).unwrap(), 1.0);
        assert_eq!(agc_loss(&vec![0.0; 2 * 257], &ones).unwrap(), 1.0);
    }

    #[test]
    fn invalid_weights_rejected() {
        assert!(LossConfig { alpha: -1.0, ..LossConfig::default() }.validate().is_err());
        assert!(LossConfig { multitask_weight: 1.5, ..LossConfig::default() }.validate().is_err());
    }
}
