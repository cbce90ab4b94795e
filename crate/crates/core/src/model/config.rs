use neuralecho_nn::layers::{Conv1d, Film, Gru, LayerNorm, Linear, Mhsa};
use serde::{Deserialize, Serialize};

use super::crf::CrfShape;
use super::ops::cov_pack_width;
use crate::error::{Error, Result};
use crate::features::STAGE1_DIM;
use crate::signal::{LpsNorm, StftConfig};
use crate::simulate::EMBEDDING_DIM;

/// Channels in the stage-2 stack `[Y, Y_AEC, X_echo]`.
pub const STAGE2_CHANNELS: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub stft: StftConfig,
    pub crf: CrfShape,
    /// Kernel width of the cRF heads along frequency.
    pub head_kernel: usize,
    pub stage1_hidden: usize,
    pub stage2_hidden: usize,
    /// Width the packed stage-2 covariances are projected to.
    pub proj_dim: usize,
    pub attn1_dim: usize,
    pub post_hidden: usize,
    pub attn2_dim: usize,
    pub heads: usize,
    pub causal_attention: bool,
    pub lps_norm: LpsNorm,
    pub leaky_slope: f64,
    pub speaker_aware: bool,
    pub embedding_dim: usize,
    pub agc_branch: bool,
    pub agc_hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::paper()
    }
}

impl ModelConfig {
    /// Full-size model: 257-unit GRUs, 4-head attention.
    pub fn paper() -> Self {
        Self {
            stft: StftConfig::default(),
            crf: CrfShape::default(),
            head_kernel: 3,
            stage1_hidden: 257,
            stage2_hidden: 257,
            proj_dim: 88,
            attn1_dim: 88,
            post_hidden: 257,
            attn2_dim: 256,
            heads: 4,
            causal_attention: false,
            lps_norm: LpsNorm::Utterance,
            leaky_slope: 0.01,
            speaker_aware: false,
            embedding_dim: EMBEDDING_DIM,
            agc_branch: false,
            agc_hidden: 257,
        }
    }

    /// Small model (about 100K parameters) for quick experiments and tests.
    pub fn toy() -> Self {
        Self {
            stage1_hidden: 16,
            stage2_hidden: 16,
            proj_dim: 4,
            attn1_dim: 4,
            post_hidden: 16,
            attn2_dim: 8,
            agc_hidden: 16,
            ..Self::paper()
        }
    }

    /// Tiny model on a 16-point STFT for finite-difference checks.
    pub fn gradcheck() -> Self {
        Self {
            stft: StftConfig { fft_size: 16, hop: 8, ..StftConfig::default() },
            stage1_hidden: 8,
            stage2_hidden: 8,
            proj_dim: 8,
            attn1_dim: 8,
            post_hidden: 8,
            attn2_dim: 8,
            heads: 2,
            embedding_dim: 8,
            agc_hidden: 8,
            ..Self::paper()
        }
    }

    pub fn bins(&self) -> usize {
        self.stft.bins()
    }

    /// Sets every causality switch: causal attention, causal cRF time taps
    /// and prefix LPS normalization.
    pub fn make_causal(&mut self) {
        self.causal_attention = true;
        self.crf.causal = true;
        self.lps_norm = LpsNorm::Causal;
    }

    pub fn validate(&self) -> Result<()> {
        self.stft.validate()?;
        let widths = [
            ("stage1_hidden", self.stage1_hidden),
            ("stage2_hidden", self.stage2_hidden),
            ("proj_dim", self.proj_dim),
            ("attn1_dim", self.attn1_dim),
            ("post_hidden", self.post_hidden),
            ("attn2_dim", self.attn2_dim),
            ("heads", self.heads),
            ("embedding_dim", self.embedding_dim),
            ("agc_hidden", self.agc_hidden),
        ];
        for (name, v) in widths {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        for (name, d) in [("attn1_dim", self.attn1_dim), ("attn2_dim", self.attn2_dim)] {
            if d % self.heads != 0 {
                return Err(Error::Config(format!("{name} {d} is not divisible by {} heads", self.heads)));
            }
        }
        if self.head_kernel.is_multiple_of(2) {
            return Err(Error::Config(format!("head_kernel {} must be odd", self.head_kernel)));
        }
        if !(self.leaky_slope.is_finite() && self.leaky_slope >= 0.0) {
            return Err(Error::Config("leaky_slope must be non-negative".into()));
        }
        Ok(())
    }

    pub fn stage1_head_channels(&self) -> usize {
        2 * self.crf.taps()
    }

    pub fn stage2_head_channels(&self) -> usize {
        STAGE2_CHANNELS * 2 * self.crf.taps()
    }

    /// Width of the packed `[Φ_NN | Φ_SS]` vector per frame.
    pub fn cov_width(&self) -> usize {
        2 * cov_pack_width(STAGE2_CHANNELS) * self.bins()
    }

    /// Exact trainable parameter count from the layer formulas.
    pub fn param_count(&self) -> usize {
        let f = self.bins();
        let freq_proj = |h: usize| if h == f { 0 } else { Linear::param_count(h, f) };
        let film = |w: usize| if self.speaker_aware { Film::param_count(self.embedding_dim, w) } else { 0 };
        let stage1 = Linear::param_count(STAGE1_DIM, 1)
            + film(f)
            + Gru::param_count(f, self.stage1_hidden)
            + freq_proj(self.stage1_hidden)
            + 2 * Conv1d::param_count(1, self.stage1_head_channels(), self.head_kernel);
        let stage2 = Linear::param_count(3 * f, self.stage2_hidden)
            + film(self.stage2_hidden)
            + Gru::param_count(self.stage2_hidden, self.stage2_hidden)
            + freq_proj(self.stage2_hidden)
            + 2 * Conv1d::param_count(1, self.stage2_head_channels(), self.head_kernel)
            + LayerNorm::param_count(self.cov_width())
            + Linear::param_count(self.cov_width(), self.proj_dim)
            + Mhsa::param_count(self.proj_dim, self.attn1_dim)
            + Gru::param_count(self.proj_dim, self.post_hidden)
            + Mhsa::param_count(self.post_hidden, self.attn2_dim)
            + Linear::param_count(self.post_hidden, 2 * STAGE2_CHANNELS * f);
        let agc = if self.agc_branch {
            Gru::param_count(f, self.agc_hidden) + Linear::param_count(self.agc_hidden, f)
        } else {
            0
        };
        stage1 + stage2 + agc
    }
}
