//! Finite-difference suites for every layer, model op and loss.

use neuralecho_nn::gradcheck::{finite_diff_check, GradCheckOptions, GradReport};
use neuralecho_nn::layers::{Conv1d, Film, Gru, LayerNorm, Linear, Mhsa};
use neuralecho_nn::{Graph, NnError, ParamId, ParamStore, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{neuralecho_loss, LossConfig, LossTarget};
use crate::error::{Error, Result};
use crate::model::ops::{cov_pack, filter_apply, istft_op, l1_op, magnitude, normalized_lps, si_sdr_op};
use crate::model::{crf, CrfShape, ModelConfig, ModelInput, NeuralEcho};
use crate::signal::{AudioSignal, LpsNorm, StftConfig, LOG_FLOOR};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradcheckConfig {
    pub step: f64,
    /// Tolerance for single layers, ops and losses.
    pub layer_tolerance: f64,
    /// Tolerance for the end-to-end model.
    pub model_tolerance: f64,
    pub seed: u64,
    /// Elements checked per parameter block (evenly strided).
    pub max_elements: usize,
    /// Multiplies analytic gradients; anything but 1 is a negative control.
    pub corrupt_factor: f64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-6,
            layer_tolerance: 1e-4,
            model_tolerance: 1e-3,
            seed: 0,
            max_elements: 24,
            corrupt_factor: 1.0,
        }
    }
}

impl GradcheckConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("step", self.step),
            ("layer_tolerance", self.layer_tolerance),
            ("model_tolerance", self.model_tolerance),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("gradcheck {name} must be positive, got {v}")));
            }
        }
        if self.max_elements == 0 {
            return Err(Error::Config("gradcheck max_elements must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct BlockResult {
    pub name: String,
    pub checked: usize,
    pub rel_err: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SuiteReport {
    /// Module filter this suite belongs to.
    pub module: &'static str,
    pub name: &'static str,
    pub tolerance: f64,
    pub max_rel_err: f64,
    pub passed: bool,
    pub blocks: Vec<BlockResult>,
}

/// Module names accepted by [`run_suites`].
pub const MODULES: [&str; 17] = [
    "linear", "conv1d", "gru", "layernorm", "mhsa", "film", "softplus", "crf", "cov_pack", "filter_apply", "istft",
    "lps", "magnitude", "si_sdr", "l1", "agc", "model",
];

type Build = Box<dyn Fn(&mut Graph, &ParamStore) -> neuralecho_nn::Result<Var>>;

struct Suite {
    module: &'static str,
    name: &'static str,
    model_level: bool,
    store: ParamStore,
    build: Build,
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

fn param(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, shape: &[usize], scale: f64) -> ParamId {
    let n = shape.iter().product();
    store
        .add(name, Tensor::new(shape, uniform(rng, n, scale)).expect("shape matches"))
        .expect("unique names")
}

/// Scalar `Σ c_i·v_i` with fixed random coefficients, so every output
/// element contributes a distinct gradient.
fn project(g: &mut Graph, v: Var, coeffs: &[f64]) -> neuralecho_nn::Result<Var> {
    let shape = g.shape(v).to_vec();
    let c = g.constant(Tensor::new(&shape, coeffs.to_vec())?);
    let p = g.mul(v, c)?;
    g.sum(p)
}

fn nn_err(e: Error) -> NnError {
    match e {
        Error::Nn(e) => e,
        e => NnError::Config(e.to_string()),
    }
}

/// Randomizes all layer weights so no gradient path starts at zero.
fn randomized(mut store: ParamStore, rng: &mut ChaCha8Rng, scale: f64) -> ParamStore {
    for p in store.iter_mut() {
        for v in p.value.data_mut() {
            *v = rng.random_range(-scale..scale);
        }
    }
    store
}

fn layer_suites(rng: &mut ChaCha8Rng) -> Result<Vec<Suite>> {
    let mut suites = Vec::new();
    let t = 5;

    // linear
    {
        let mut s = ParamStore::new();
        let x = param(&mut s, rng, "x", &[t, 4], 1.0);
        let layer = Linear::new(&mut s, rng, "linear", 4, 3)?;
        let c = uniform(rng, t * 3, 1.0);
        let s = randomized(s, rng, 0.8);
        suites.push(Suite {
            module: "linear",
            name: "linear",
            model_level: false,
            store: s,
            build: Box::new(move |g, st| {
                let xv = g.param(st, x);
                let y = layer.forward(g, st, xv)?;
                project(g, y, &c)
            }),
        });
    }
    // conv1d
    {
        let mut s = ParamStore::new();
        let x = param(&mut s, rng, "x", &[2, 3, 7], 1.0);
        let layer = Conv1d::new(&mut s, rng, "conv1d", 3, 4, 3)?;
        let c = uniform(rng, 2 * 4 * 7, 1.0);
        let s = randomized(s, rng, 0.8);
        suites.push(Suite {
            module: "conv1d",
            name: "conv1d",
            model_level: false,
            store: s,
            build: Box::new(move |g, st| {
                let xv = g.param(st, x);
                let y = layer.forward(g, st, xv)?;
                project(g, y, &c)
            }),
        });
    }
    // gru, with a learned initial state
    {
        let mut s = ParamStore::new();
        let x = param(&mut s, rng, "x", &[t, 4], 1.0);
        let h0 = param(&mut s, rng, "h0", &[3], 0.5);
        let layer = Gru::new(&mut s, rng, "gru", 4, 3)?;
        let c = uniform(rng, t * 3, 1.0);
        let s = randomized(s, rng, 0.8);
        suites.push(Suite {
            module: "gru",
            name: "gru",
            model_level: false,
            store: s,
            build: Box::new(move |g, st| {
                let xv = g.param(st, x);
                let hv = g.param(st, h0);
                let y = layer.forward_from(g, st, xv, hv)?;
                project(g, y, &c)
            }),
        });
    }
    // layer norm
    {
        let mut s = ParamStore::new();
        let x = param(&mut s, rng, "x", &[t, 6], 1.0);
        let layer = LayerNorm::new(&mut s, "layernorm", 6)?;
        let c = uniform(rng, t * 6, 1.0);
        let s = randomized(s, rng, 1.0);
        suites.push(Suite {
            module: "layernorm",
            name: "layernorm",
            model_level: false,
            store: s,
            build: Box::new(move |g, st| {
                let xv = g.param(st, x);
                let y = layer.forward(g, st, xv)?;
                project(g, y, &c)
            }),
        });
    }
    // attention, both masks
    for (name, causal) in [("mhsa", false), ("mhsa_causal", true)] {
        let mut s = ParamStore::new();
        let x = param(&mut s, rng, "x", &[t, 6], 1.0);
        let layer = Mhsa::new(&mut s, rng, "mhsa", 6, 4, 2, causal)?;
        let c = uniform(rng, t * 6, 1.0);
        let s = randomized(s, rng, 0.8);
        suites.push(Suite {
            module: "mhsa",
            name,
            model_level: false,
            store: s,
            build: Box::new(move |g, st| {
                let xv = g.param(st, x);
                let y = layer.forward(g, st, xv)?;
                project(g, y, &c)
            }),
        });
    }
    // FiLM
    {
        let mut s = ParamStore::new();
        let x = param(&mut s, rng, "theta", &[t, 6], 1.0);
        let d = param(&mut s, rng, "cond", &[4], 1.0);
        let layer = Film::new(&mut s, "film", 4, 6)?;
        let c = uniform(rng, t * 6, 1.0);
        let s = randomized(s, rng, 0.5);
        suites.push(Suite {
            module: "film",
            name: "film",
            model_level: false,
            store: s,
            build: Box::new(move |g, st| {
                let xv = g.param(st, x);
                let dv = g.param(st, d);
                let y = layer.forward(g, st, xv, dv)?;
                project(g, y, &c)
            }),
        });
    }
    // softplus head
    {
        let mut s = ParamStore::new();
        let x = param(&mut s, rng, "x", &[t, 4], 1.0);
        let layer = Linear::new(&mut s, rng, "head", 4, 5)?;
        let c = uniform(rng, t * 5, 1.0);
        let s = randomized(s, rng, 1.0);
        suites.push(Suite {
            module: "softplus",
            name: "softplus_head",
            model_level: false,
            store: s,
            build: Box::new(move |g, st| {
                let xv = g.param(st, x);
                let y = layer.forward(g, st, xv)?;
                let y = g.softplus(y)?;
                project(g, y, &c)
            }),
        });
    }
    Ok(suites)
}

fn op_suites(rng: &mut ChaCha8Rng) -> Result<Vec<Suite>> {
    let mut suites = Vec::new();
    let (t, f) = (6, 9);
    let stft_cfg = StftConfig { fft_size: 16, hop: 8, ..StftConfig::default() };
    let len = (t - 1) * stft_cfg.hop;

    for (name, causal) in [("crf", false), ("crf_causal", true)] {
        let shape = CrfShape { causal, ..CrfShape::default() };
        let mut s = ParamStore::new();
        let taps = param(&mut s, rng, "taps", &[t, 2 * shape.taps() * 2, f], 1.0);
        let sig = param(&mut s, rng, "signal", &[2, t, f, 2], 1.0);
        let c = uniform(rng, 2 * t * f * 2, 1.0);
        suites.push(Suite {
            module: "crf",
            name,
            model_level: false,
            store: s,
            build: Box::new(move |g, st| {
                let (a, b) = (g.param(st, taps), g.param(st, sig));
                let y = crf(g, a, b, shape).map_err(nn_err)?;
                project(g, y, &c)
            }),
        });
    }
    {
        let mut s = ParamStore::new();
        let z = param(&mut s, rng, "stack", &[3, t, f, 2], 1.0);
        let c = uniform(rng, t * f * 12, 1.0);
        suites.push(Suite {
            module: "cov_pack",
            name: "cov_pack",
            model_level: false,
            store: s,
            build: Box::new(move |g, st| {
                let zv = g.param(st, z);
                let y = cov_pack(g, zv).map_err(nn_err)?;
                project(g, y, &c)
            }),
        });
    }
    {
        let mut s = ParamStore::new();
        let w = param(&mut s, rng, "filters", &[t, 6 * f], 1.0);
        let z = param(&mut s, rng, "stack", &[3, t, f, 2], 1.0);
        let c = uniform(rng, t * f * 2, 1.0);
        suites.push(Suite {
            module: "filter_apply",
            name: "filter_apply",
            model_level: false,
            store: s,
            build: Box::new(move |g, st| {
                let (wv, zv) = (g.param(st, w), g.param(st, z));
                let y = filter_apply(g, wv, zv).map_err(nn_err)?;
                project(g, y, &c)
            }),
        });
    }
    {
        let mut s = ParamStore::new();
        let spec = param(&mut s, rng, "spec", &[t, f, 2], 1.0);
        let c = uniform(rng, len, 1.0);
        let cfg = stft_cfg.clone();
        suites.push(Suite {
            module: "istft",
            name: "istft",
            model_level: false,
            store: s,
            build: Box::new(move |g, st| {
                let sv = g.param(st, spec);
                let y = istft_op(g, sv, &cfg, len).map_err(nn_err)?;
                project(g, y, &c)
            }),
        });
    }
    for (name, norm) in [("lps_utterance", LpsNorm::Utterance), ("lps_causal", LpsNorm::Causal)] {
        let mut s = ParamStore::new();
        let spec = param(&mut s, rng, "spec", &[t, f, 2], 1.0);
        let c = uniform(rng, t * f, 1.0);
        suites.push(Suite {
            module: "lps",
            name,
            model_level: false,
            store: s,
            build: Box::new(move |g, st| {
                let sv = g.param(st, spec);
                let y = normalized_lps(g, sv, norm, LOG_FLOOR).map_err(nn_err)?;
                project(g, y, &c)
            }),
        });
    }
    {
        let mut s = ParamStore::new();
        let spec = param(&mut s, rng, "spec", &[t, f, 2], 1.0);
        let c = uniform(rng, t * f, 1.0);
        suites.push(Suite {
            module: "magnitude",
            name: "magnitude",
            model_level: false,
            store: s,
            build: Box::new(move |g, st| {
                let sv = g.param(st, spec);
                let y = magnitude(g, sv).map_err(nn_err)?;
                project(g, y, &c)
            }),
        });
    }
    {
        let mut s = ParamStore::new();
        let reference = uniform(rng, 64, 1.0);
        let noisy: Vec<f64> = reference.iter().map(|v| v + rng.random_range(-0.5..0.5)).collect();
        let est = s.add("estimate", Tensor::from_vec(noisy))?;
        suites.push(Suite {
            module: "si_sdr",
            name: "si_sdr",
            model_level: false,
            store: s,
            build: Box::new(move |g, st| {
                let e = g.param(st, est);
                si_sdr_op(g, e, &reference).map_err(nn_err)
            }),
        });
    }
    {
        let mut s = ParamStore::new();
        let x = param(&mut s, rng, "x", &[t, f], 1.0);
        let target = uniform(rng, t * f, 1.0);
        suites.push(Suite {
            module: "l1",
            name: "l1",
            model_level: false,
            store: s,
            build: Box::new(move |g, st| {
                let xv = g.param(st, x);
                l1_op(g, xv, &target).map_err(nn_err)
            }),
        });
    }
    // AGC branch and its loss on a fixed enhanced spectrum
    {
        let mut s = ParamStore::new();
        let spec = param(&mut s, rng, "enhanced_spec", &[t, f, 2], 1.0);
        let gru = Gru::new(&mut s, rng, "agc.gru", f, 4)?;
        let head = Linear::new(&mut s, rng, "agc.head", 4, f)?;
        let target: Vec<f64> = uniform(rng, t * f, 1.0).iter().map(|v| v.abs() + 0.5).collect();
        let s = randomized(s, rng, 0.8);
        suites.push(Suite {
            module: "agc",
            name: "agc_loss",
            model_level: false,
            store: s,
            build: Box::new(move |g, st| {
                let sv = g.param(st, spec);
                let m = magnitude(g, sv).map_err(nn_err)?;
                let h = gru.forward(g, st, m)?;
                let y = head.forward(g, st, h)?;
                let y = g.softplus(y)?;
                l1_op(g, y, &target).map_err(nn_err)
            }),
        });
    }
    Ok(suites)
}

fn model_suite(rng: &mut ChaCha8Rng) -> Result<Suite> {
    let cfg = ModelConfig { speaker_aware: true, agc_branch: true, ..ModelConfig::gradcheck() };
    let mut model = NeuralEcho::new(cfg.clone(), rng.random())?;
    model.store = randomized(model.store, rng, 0.4);
    // 6 frames of the 16-point STFT
    let len = 5 * cfg.stft.hop;
    let sig = |rng: &mut ChaCha8Rng| AudioSignal::new(uniform(rng, len, 0.5), cfg.stft.sample_rate);
    let (mic, far, target, agc) = (sig(rng)?, sig(rng)?, sig(rng)?, sig(rng)?);
    let emb = uniform(rng, cfg.embedding_dim, 1.0);
    let input = ModelInput::prepare(&cfg, &mic, &far, Some(&emb))?;
    let target = LossTarget::prepare(&cfg, &target, Some(&agc))?;
    let loss_cfg = LossConfig { agc_task: true, ..LossConfig::default() };
    let store = model.store.clone();
    Ok(Suite {
        module: "model",
        name: "two_stage_model",
        model_level: true,
        store,
        build: Box::new(move |g, st| {
            let vars = model.forward_with(g, st, &input).map_err(nn_err)?;
            let terms = neuralecho_loss(g, &vars, &target, &loss_cfg).map_err(nn_err)?;
            Ok(terms.total)
        }),
    })
}

fn report(suite: &Suite, r: GradReport) -> SuiteReport {
    SuiteReport {
        module: suite.module,
        name: suite.name,
        tolerance: r.tolerance,
        max_rel_err: r.max_rel_err(),
        passed: r.passed(),
        blocks: r
            .blocks
            .iter()
            .map(|b| BlockResult { name: b.name.clone(), checked: b.checked, rel_err: b.rel_err })
            .collect(),
    }
}

/// Runs every suite, or only those of `module`.
pub fn run_suites(cfg: &GradcheckConfig, module: Option<&str>) -> Result<Vec<SuiteReport>> {
    cfg.validate()?;
    if let Some(m) = module {
        if !MODULES.contains(&m) {
            return Err(Error::InvalidArgument(format!(
                "unknown gradcheck module {m:?}; expected one of {}",
                MODULES.join(", ")
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut suites = layer_suites(&mut rng)?;
    suites.extend(op_suites(&mut rng)?);
    suites.push(model_suite(&mut rng)?);
    let mut reports = Vec::new();
    for mut suite in suites.into_iter().filter(|s| module.is_none_or(|m| m == s.module)) {
        let opts = GradCheckOptions {
            step: cfg.step,
            tolerance: if suite.model_level { cfg.model_tolerance } else { cfg.layer_tolerance },
            max_elements: Some(cfg.max_elements),
            corrupt_factor: cfg.corrupt_factor,
        };
        let r = finite_diff_check(&mut suite.store, &suite.build, &opts)?;
        reports.push(report(&suite, r));
    }
    Ok(reports)
}
