use neuralecho_nn::layers::{Conv1d, Film, Gru, LayerNorm, Linear, Mhsa};
use neuralecho_nn::{Graph, ParamId, ParamStore, Tensor, Var};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{ModelConfig, STAGE2_CHANNELS};
use super::crf::crf;
use super::ops::{cov_pack, filter_apply, istft_op, magnitude, normalized_lps};
use crate::error::{Error, Result};
use crate::features::{assemble_stage1, STAGE1_DIM};
use crate::signal::{istft, stft, AudioSignal, Spectrogram, LOG_FLOOR};

/// Precomputed network inputs for one utterance.
#[derive(Clone, Debug)]
pub struct ModelInput {
    pub mic: Spectrogram,
    pub farend: Spectrogram,
    /// Stage-1 features, `[T, F, 368]`.
    pub features: Tensor,
    pub embedding: Option<Vec<f64>>,
}

impl ModelInput {
    pub fn prepare(cfg: &ModelConfig, mic: &AudioSignal, farend: &AudioSignal, embedding: Option<&[f64]>) -> Result<Self> {
        if mic.len() != farend.len() {
            return Err(Error::Shape(format!(
                "mic has {} samples, far-end has {}",
                mic.len(),
                farend.len()
            )));
        }
        let y = stft(mic, &cfg.stft)?;
        let x = stft(farend, &cfg.stft)?;
        let features = assemble_stage1(&y, &x, cfg.lps_norm)?;
        Self::from_parts(cfg, y, x, features, embedding.map(<[f64]>::to_vec))
    }

    pub fn from_parts(
        cfg: &ModelConfig,
        mic: Spectrogram,
        farend: Spectrogram,
        features: Tensor,
        embedding: Option<Vec<f64>>,
    ) -> Result<Self> {
        if mic.bins() != cfg.bins() || !mic.same_shape(&farend) {
            return Err(Error::Shape("spectrograms do not match the model STFT".into()));
        }
        if features.shape() != [mic.frames(), mic.bins(), STAGE1_DIM] {
            return Err(Error::Shape(format!("features {:?}", features.shape())));
        }
        if cfg.speaker_aware {
            match &embedding {
                None => return Err(Error::InvalidArgument("speaker-aware model needs an embedding".into())),
                Some(e) if e.len() != cfg.embedding_dim => {
                    return Err(Error::Shape(format!(
                        "embedding has {} values, model expects {}",
                        e.len(),
                        cfg.embedding_dim
                    )))
                }
                _ => {}
            }
        }
        Ok(Self { mic, farend, features, embedding })
    }

    pub fn frames(&self) -> usize {
        self.mic.frames()
    }

    pub fn signal_len(&self) -> usize {
        self.mic.signal_len()
    }
}

/// Graph handles produced by one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ForwardVars {
    /// Stage-1 per-bin projection, `[T, F]`.
    pub proj: Var,
    /// Stage-1 fused feature after FiLM (equal to `proj` without FiLM).
    pub fused1: Var,
    /// `[1, T, F, 2]`.
    pub y_aec: Var,
    pub x_echo: Var,
    /// Stage-2 per-channel estimates, `[3, T, F, 2]`.
    pub noise_est: Var,
    pub speech_est: Var,
    /// Output of the first covariance projection (`Φ_proj`).
    pub phi_proj: Var,
    /// `Φ_proj + ReLU(MHSA(Φ_proj))`.
    pub phi_attn: Var,
    /// Single-tap filters, `[T, 6F]`.
    pub filters: Var,
    /// `Ŝ_r`, `[T, F, 2]`.
    pub enhanced_spec: Var,
    /// `ŝ_r`, `[L]`.
    pub enhanced: Var,
    /// Post-AGC magnitude, `[T, F]`.
    pub agc_mag: Option<Var>,
}

#[derive(Clone, Debug)]
struct Stage1 {
    proj: Linear,
    film: Option<Film>,
    gru: Gru,
    freq: Option<Linear>,
    aec_head: Conv1d,
    echo_head: Conv1d,
}

#[derive(Clone, Debug)]
struct Stage2 {
    input: Linear,
    film: Option<Film>,
    gru: Gru,
    freq: Option<Linear>,
    noise_head: Conv1d,
    speech_head: Conv1d,
    cov_norm: LayerNorm,
    cov_proj: Linear,
    attn1: Mhsa,
    gru_post: Gru,
    attn2: Mhsa,
    filter_head: Linear,
}

#[derive(Clone, Debug)]
struct AgcBranch {
    gru: Gru,
    head: Linear,
}

/// The two-stage echo cancellation network and its parameters.
#[derive(Clone, Debug)]
pub struct NeuralEcho {
    config: ModelConfig,
    pub store: ParamStore,
    stage1: Stage1,
    stage2: Stage2,
    agc: Option<AgcBranch>,
}

fn set_bias(store: &mut ParamStore, id: ParamId, index: usize, value: f64) {
    store.get_mut(id).value.data_mut()[index] = value;
}

fn zero(store: &mut ParamStore, id: ParamId) {
    store.get_mut(id).value.fill(0.0);
}

impl NeuralEcho {
    /// Builds a freshly initialized model. Filter heads start at identity
    /// (zero weights, identity bias): stage-1 cRFs pass `Y` and `X` through
    /// and the output filter selects the microphone channel.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let s = &mut store;
        let r = &mut rng;
        let f = config.bins();
        let c = &config;
        let freq = |s: &mut ParamStore, r: &mut ChaCha8Rng, name: &str, h: usize| -> Result<Option<Linear>> {
            Ok(if h == f { None } else { Some(Linear::new(s, r, name, h, f)?) })
        };
        let film = |s: &mut ParamStore, name: &str, w: usize| -> Result<Option<Film>> {
            Ok(if c.speaker_aware { Some(Film::new(s, name, c.embedding_dim, w)?) } else { None })
        };
        let stage1 = Stage1 {
            proj: Linear::new(s, r, "stage1.proj", STAGE1_DIM, 1)?,
            film: film(s, "stage1.film", f)?,
            gru: Gru::new(s, r, "stage1.gru", f, c.stage1_hidden)?,
            freq: freq(s, r, "stage1.freq", c.stage1_hidden)?,
            aec_head: Conv1d::new(s, r, "stage1.aec_head", 1, c.stage1_head_channels(), c.head_kernel)?,
            echo_head: Conv1d::new(s, r, "stage1.echo_head", 1, c.stage1_head_channels(), c.head_kernel)?,
        };
        let stage2 = Stage2 {
            input: Linear::new(s, r, "stage2.input", 3 * f, c.stage2_hidden)?,
            film: film(s, "stage2.film", c.stage2_hidden)?,
            gru: Gru::new(s, r, "stage2.gru", c.stage2_hidden, c.stage2_hidden)?,
            freq: freq(s, r, "stage2.freq", c.stage2_hidden)?,
            noise_head: Conv1d::new(s, r, "stage2.noise_head", 1, c.stage2_head_channels(), c.head_kernel)?,
            speech_head: Conv1d::new(s, r, "stage2.speech_head", 1, c.stage2_head_channels(), c.head_kernel)?,
            cov_norm: LayerNorm::new(s, "stage2.cov_norm", c.cov_width())?,
            cov_proj: Linear::new(s, r, "stage2.cov_proj", c.cov_width(), c.proj_dim)?,
            attn1: Mhsa::new(s, r, "stage2.attn1", c.proj_dim, c.attn1_dim, c.heads, c.causal_attention)?,
            gru_post: Gru::new(s, r, "stage2.gru_post", c.proj_dim, c.post_hidden)?,
            attn2: Mhsa::new(s, r, "stage2.attn2", c.post_hidden, c.attn2_dim, c.heads, c.causal_attention)?,
            filter_head: Linear::new(s, r, "stage2.filter_head", c.post_hidden, 2 * STAGE2_CHANNELS * f)?,
        };
        let agc = if c.agc_branch {
            Some(AgcBranch {
                gru: Gru::new(s, r, "agc.gru", f, c.agc_hidden)?,
                head: Linear::new(s, r, "agc.head", c.agc_hidden, f)?,
            })
        } else {
            None
        };
        // real part of the centre tap
        for id in [stage1.aec_head.weight, stage1.echo_head.weight, stage2.filter_head.weight] {
            zero(&mut store, id);
        }
        let centre = 2 * c.crf.center();
        set_bias(&mut store, stage1.aec_head.bias, centre, 1.0);
        set_bias(&mut store, stage1.echo_head.bias, centre, 1.0);
        for k in 0..f {
            set_bias(&mut store, stage2.filter_head.bias, k, 1.0);
        }
        Ok(Self { config, store, stage1, stage2, agc })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn param_count(&self) -> usize {
        self.store.num_scalars()
    }

    /// Records a full forward pass on `g`.
    pub fn forward(&self, g: &mut Graph, input: &ModelInput) -> Result<ForwardVars> {
        self.forward_with(g, &self.store, input)
    }

    /// Forward pass reading parameters from `store`, which must have the
    /// layout of `self.store` (used by finite-difference checks).
    pub fn forward_with(&self, g: &mut Graph, store: &ParamStore, input: &ModelInput) -> Result<ForwardVars> {
        let cfg = &self.config;
        let (t, f) = (input.frames(), cfg.bins());
        let cond = match (&input.embedding, cfg.speaker_aware) {
            (Some(e), true) => Some(g.constant(Tensor::from_vec(e.clone()))),
            (None, true) => return Err(Error::InvalidArgument("speaker-aware model needs an embedding".into())),
            _ => None,
        };

        // stage 1
        let s1 = &self.stage1;
        let feat = g.constant(input.features.clone());
        let proj = s1.proj.forward(g, store, feat)?;
        let proj = g.reshape(proj, &[t, f])?;
        let fused1 = match (&s1.film, cond) {
            (Some(film), Some(d)) => film.forward(g, store, proj, d)?,
            _ => proj,
        };
        let mut h1 = s1.gru.forward(g, store, fused1)?;
        if let Some(fp) = &s1.freq {
            h1 = fp.forward(g, store, h1)?;
        }
        let h1 = g.reshape(h1, &[t, 1, f])?;
        let aec_taps = s1.aec_head.forward(g, store, h1)?;
        let echo_taps = s1.echo_head.forward(g, store, h1)?;
        let y = g.constant(Tensor::new(&[1, t, f, 2], input.mic.to_interleaved())?);
        let x = g.constant(Tensor::new(&[1, t, f, 2], input.farend.to_interleaved())?);
        let y_aec = crf(g, aec_taps, y, cfg.crf)?;
        let x_echo = crf(g, echo_taps, x, cfg.crf)?;

        // stage 2
        let s2 = &self.stage2;
        let y_aec_tf = g.reshape(y_aec, &[t, f, 2])?;
        let x_echo_tf = g.reshape(x_echo, &[t, f, 2])?;
        let lps_aec = normalized_lps(g, y_aec_tf, cfg.lps_norm, LOG_FLOOR)?;
        let lps_echo = normalized_lps(g, x_echo_tf, cfg.lps_norm, LOG_FLOOR)?;
        let stage2_in = g.concat_last(&[proj, lps_aec, lps_echo])?;
        let e2 = s2.input.forward(g, store, stage2_in)?;
        let e2 = match (&s2.film, cond) {
            (Some(film), Some(d)) => film.forward(g, store, e2, d)?,
            _ => e2,
        };
        let mut h2 = s2.gru.forward(g, store, e2)?;
        if let Some(fp) = &s2.freq {
            h2 = fp.forward(g, store, h2)?;
        }
        let h2 = g.reshape(h2, &[t, 1, f])?;
        let noise_taps = s2.noise_head.forward(g, store, h2)?;
        let speech_taps = s2.speech_head.forward(g, store, h2)?;
        let stack = g.concat_first(&[y, y_aec, x_echo])?;
        let noise_est = crf(g, noise_taps, stack, cfg.crf)?;
        let speech_est = crf(g, speech_taps, stack, cfg.crf)?;
        let cov_n = cov_pack(g, noise_est)?;
        let cov_s = cov_pack(g, speech_est)?;
        let cov = g.concat_last(&[cov_n, cov_s])?;
        let cov = s2.cov_norm.forward(g, store, cov)?;
        let phi_proj = s2.cov_proj.forward(g, store, cov)?;
        let phi_proj = g.leaky_relu(phi_proj, cfg.leaky_slope)?;
        let a1 = s2.attn1.forward(g, store, phi_proj)?;
        let a1 = g.relu(a1)?;
        let phi_attn = g.add(phi_proj, a1)?;
        let phi_gru = s2.gru_post.forward(g, store, phi_attn)?;
        let a2 = s2.attn2.forward(g, store, phi_gru)?;
        let a2 = g.relu(a2)?;
        let phi_attn2 = g.add(phi_gru, a2)?;
        let filters = s2.filter_head.forward(g, store, phi_attn2)?;
        let enhanced_spec = filter_apply(g, filters, stack)?;
        let enhanced = istft_op(g, enhanced_spec, &cfg.stft, input.signal_len())?;

        let agc_mag = match &self.agc {
            Some(branch) => {
                let mag = magnitude(g, enhanced_spec)?;
                let h = branch.gru.forward(g, store, mag)?;
                let m = branch.head.forward(g, store, h)?;
                Some(g.softplus(m)?)
            }
            None => None,
        };
        Ok(ForwardVars {
            proj,
            fused1,
            y_aec,
            x_echo,
            noise_est,
            speech_est,
            phi_proj,
            phi_attn,
            filters,
            enhanced_spec,
            enhanced,
            agc_mag,
        })
    }

    /// Runs the model on one utterance.
    pub fn enhance(&self, mic: &AudioSignal, farend: &AudioSignal, embedding: Option<&[f64]>) -> Result<Enhanced> {
        if mic.sample_rate() != self.config.stft.sample_rate {
            return Err(Error::RateMismatch { expected: self.config.stft.sample_rate, actual: mic.sample_rate() });
        }
        if farend.sample_rate() != mic.sample_rate() {
            return Err(Error::RateMismatch { expected: mic.sample_rate(), actual: farend.sample_rate() });
        }
        let input = ModelInput::prepare(&self.config, mic, farend, embedding)?;
        self.enhance_input(&input)
    }

    pub fn enhance_input(&self, input: &ModelInput) -> Result<Enhanced> {
        let mut g = Graph::new();
        let vars = self.forward(&mut g, input)?;
        let spec = Spectrogram::from_interleaved(
            self.config.stft.clone(),
            input.frames(),
            input.signal_len(),
            g.value(vars.enhanced_spec).data(),
        )?;
        let signal = AudioSignal::new(g.value(vars.enhanced).data().to_vec(), self.config.stft.sample_rate)?;
        let post_agc = match vars.agc_mag {
            Some(m) => Some(combine_phase(g.value(m).data(), &spec)?),
            None => None,
        };
        Ok(Enhanced { spec, signal, post_agc })
    }
}

/// Model outputs for one utterance.
#[derive(Clone, Debug)]
pub struct Enhanced {
    /// `Ŝ_r`.
    pub spec: Spectrogram,
    /// `ŝ_r`.
    pub signal: AudioSignal,
    pub post_agc: Option<AudioSignal>,
}

/// Synthesizes the signal with magnitude `mag` (`[T, F]`) and the phase of
/// `phase_of`; bins with zero magnitude in `phase_of` use zero phase.
pub fn combine_phase(mag: &[f64], phase_of: &Spectrogram) -> Result<AudioSignal> {
    if mag.len() != phase_of.data().len() {
        return Err(Error::Shape(format!("{} magnitudes for {} bins", mag.len(), phase_of.data().len())));
    }
    let spec = Spectrogram::new(
        phase_of.config().clone(),
        phase_of.frames(),
        phase_of.signal_len(),
        mag.iter()
            .zip(phase_of.data())
            .map(|(m, c)| {
                let n = c.norm();
                if n > 0.0 { c * (m / n) } else { Complex64::new(*m, 0.0) }
            })
            .collect(),
    )?;
    Ok(istft(&spec))
}
