//! The run configuration: one JSON document with a section per module.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};
use crate::model::ModelConfig;
use crate::simulate::SimulationConfig;
use crate::train::{GradcheckConfig, LossConfig, Schedule};

/// Name of the effective configuration echoed into output directories.
pub const EFFECTIVE_CONFIG_FILE: &str = "run_config.json";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub simulation: SimulationConfig,
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub schedule: Schedule,
    pub gradcheck: GradcheckConfig,
}

impl RunConfig {
    /// Parses and validates; parse errors carry line and column.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).at(path)?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            e => e,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).at(path)
    }

    pub fn validate(&self) -> Result<()> {
        self.simulation.validate()?;
        self.model.validate()?;
        self.loss.validate()?;
        self.schedule.validate()?;
        self.gradcheck.validate()?;
        if self.simulation.sample_rate != self.model.stft.sample_rate {
            return Err(Error::Config(format!(
                "simulation.sample_rate {} differs from model.stft.sample_rate {}",
                self.simulation.sample_rate, self.model.stft.sample_rate
            )));
        }
        if self.loss.agc_task && !self.model.agc_branch {
            return Err(Error::Config("loss.agc_task needs model.agc_branch".into()));
        }
        Ok(())
    }

    /// Selects the speaker-aware and AGC variants.
    pub fn set_variant(&mut self, speaker_aware: bool, agc: bool) {
        if speaker_aware {
            self.model.speaker_aware = true;
        }
        if agc {
            self.model.agc_branch = true;
            self.loss.agc_task = true;
        }
    }
}
