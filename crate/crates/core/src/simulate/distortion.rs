use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::AudioSignal;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DistortionKind {
    #[default]
    None,
    HardClip,
    Sigmoid,
}

/// Loudspeaker nonlinearity applied to the far-end signal before the echo path.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DistortionSpec {
    pub kind: DistortionKind,
    /// Clipping level as a fraction of the input peak.
    pub clip_ratio: f64,
    pub sigmoid_gain: f64,
}

impl Default for DistortionSpec {
    fn default() -> Self {
        Self {
            kind: DistortionKind::None,
            clip_ratio: 0.8,
            sigmoid_gain: 4.0,
        }
    }
}

impl DistortionSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip_ratio > 0.0 && self.clip_ratio <= 1.0) {
            return Err(Error::InvalidArgument(format!("clip_ratio {} must be in (0, 1]", self.clip_ratio)));
        }
        if !(self.sigmoid_gain > 0.0 && self.sigmoid_gain.is_finite()) {
            return Err(Error::InvalidArgument(format!("sigmoid_gain {} must be positive", self.sigmoid_gain)));
        }
        Ok(())
    }
}

pub fn sigmoid_curve(x: f64, gain: f64) -> f64 {
    2.0 / (1.0 + (-gain * x).exp()) - 1.0
}

pub fn apply_distortion(x: &AudioSignal, spec: &DistortionSpec) -> Result<AudioSignal> {
    spec.validate()?;
    let peak = x.samples().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let out: Vec<f64> = match spec.kind {
        DistortionKind::None => return Ok(x.clone()),
        DistortionKind::HardClip => {
            let level = spec.clip_ratio * peak;
            x.samples().iter().map(|v| v.clamp(-level, level)).collect()
        }
        DistortionKind::Sigmoid => {
            let shaped: Vec<f64> = x.samples().iter().map(|v| sigmoid_curve(*v, spec.sigmoid_gain)).collect();
            let shaped_peak = shaped.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let scale = if shaped_peak > 0.0 { peak / shaped_peak } else { 0.0 };
            shaped.iter().map(|v| v * scale).collect()
        }
    };
    AudioSignal::new(out, x.sample_rate())
}
