//! Parameterized layers built on the graph ops.
//!
//! Matrices are initialized uniform(−1/√fan_in, +1/√fan_in), biases to
//! zero and layer-norm gains to one.

use rand::Rng;

use crate::error::{shape_err, Result};
use crate::graph::{Graph, Var};
use crate::ops::GruWeights;
use crate::params::{Init, ParamId, ParamStore};
use crate::tensor::Tensor;

fn add(store: &mut ParamStore, rng: &mut impl Rng, name: String, shape: &[usize], init: Init) -> Result<ParamId> {
    store.add(name, init.sample(shape, rng))
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, name: &str, in_dim: usize, out_dim: usize) -> Result<Self> {
        Ok(Self {
            weight: add(store, rng, format!("{name}.weight"), &[in_dim, out_dim], Init::FanIn(in_dim))?,
            bias: add(store, rng, format!("{name}.bias"), &[out_dim], Init::Zeros)?,
            in_dim,
            out_dim,
        })
    }

    /// Both weight and bias start at zero.
    pub fn zeros(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize) -> Result<Self> {
        Ok(Self {
            weight: store.add(format!("{name}.weight"), Tensor::zeros(&[in_dim, out_dim]))?,
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[out_dim]))?,
            in_dim,
            out_dim,
        })
    }

    pub fn param_count(in_dim: usize, out_dim: usize) -> usize {
        in_dim * out_dim + out_dim
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        g.linear(x, w, Some(b))
    }
}

#[derive(Clone, Debug)]
pub struct Conv1d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub kernel: usize,
}

impl Conv1d {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
    ) -> Result<Self> {
        if kernel.is_multiple_of(2) {
            return shape_err("conv1d", format!("kernel length {kernel} must be odd"));
        }
        Ok(Self {
            weight: add(store, rng, format!("{name}.weight"), &[c_out, c_in, kernel], Init::FanIn(c_in * kernel))?,
            bias: add(store, rng, format!("{name}.bias"), &[c_out], Init::Zeros)?,
            kernel,
        })
    }

    pub fn param_count(c_in: usize, c_out: usize, kernel: usize) -> usize {
        c_out * c_in * kernel + c_out
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        g.conv1d(x, w, b)
    }
}

#[derive(Clone, Debug)]
pub struct Gru {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub bias: ParamId,
    pub input_size: usize,
    pub hidden_size: usize,
}

impl Gru {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, name: &str, input_size: usize, hidden_size: usize) -> Result<Self> {
        let h3 = 3 * hidden_size;
        Ok(Self {
            w_ih: add(store, rng, format!("{name}.w_ih"), &[input_size, h3], Init::FanIn(input_size))?,
            w_hh: add(store, rng, format!("{name}.w_hh"), &[hidden_size, h3], Init::FanIn(hidden_size))?,
            bias: add(store, rng, format!("{name}.bias"), &[h3], Init::Zeros)?,
            input_size,
            hidden_size,
        })
    }

    /// 3·(input·hidden + hidden·hidden + hidden)
    pub fn param_count(input_size: usize, hidden_size: usize) -> usize {
        3 * (input_size * hidden_size + hidden_size * hidden_size + hidden_size)
    }

    /// Runs from a zero initial state.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let h0 = g.constant(Tensor::zeros(&[self.hidden_size]));
        self.forward_from(g, store, x, h0)
    }

    pub fn forward_from(&self, g: &mut Graph, store: &ParamStore, x: Var, h0: Var) -> Result<Var> {
        let w = GruWeights {
            w_ih: g.param(store, self.w_ih),
            w_hh: g.param(store, self.w_hh),
            bias: g.param(store, self.bias),
        };
        g.gru(x, h0, w)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
    pub dim: usize,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Result<Self> {
        Ok(Self {
            gain: store.add(format!("{name}.gain"), Tensor::full(&[dim], 1.0))?,
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[dim]))?,
            dim,
        })
    }

    pub fn param_count(dim: usize) -> usize {
        2 * dim
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let gain = g.param(store, self.gain);
        let bias = g.param(store, self.bias);
        g.layer_norm(x, gain, bias)
    }
}

/// Multi-head self-attention over time frames.
///
/// Inputs `[T, model_dim]` are projected to queries, keys and values of
/// width `attn_dim` (split across `heads`), attended, and projected back to
/// `model_dim`.
#[derive(Clone, Debug)]
pub struct Mhsa {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub heads: usize,
    pub causal: bool,
}

impl Mhsa {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        model_dim: usize,
        attn_dim: usize,
        heads: usize,
        causal: bool,
    ) -> Result<Self> {
        if heads == 0 || !attn_dim.is_multiple_of(heads) {
            return shape_err("mhsa", format!("attention dim {attn_dim} not divisible by {heads} heads"));
        }
        Ok(Self {
            query: Linear::new(store, rng, &format!("{name}.query"), model_dim, attn_dim)?,
            key: Linear::new(store, rng, &format!("{name}.key"), model_dim, attn_dim)?,
            value: Linear::new(store, rng, &format!("{name}.value"), model_dim, attn_dim)?,
            output: Linear::new(store, rng, &format!("{name}.output"), attn_dim, model_dim)?,
            heads,
            causal,
        })
    }

    pub fn param_count(model_dim: usize, attn_dim: usize) -> usize {
        3 * Linear::param_count(model_dim, attn_dim) + Linear::param_count(attn_dim, model_dim)
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let q = self.query.forward(g, store, x)?;
        let k = self.key.forward(g, store, x)?;
        let v = self.value.forward(g, store, x)?;
        let o = g.attention(q, k, v, self.heads, self.causal)?;
        self.output.forward(g, store, o)
    }
}

/// Feature-wise linear modulation by a conditioning vector with a
/// layer-normalized residual:
///
/// ```text
/// θ̂ = θ + r(d) ⊙ θ + h(d)
/// ξ = LayerNorm(θ̂) + θ
/// ```
///
/// `r` and `h` start at zero, so a fresh layer computes `LayerNorm(θ) + θ`.
#[derive(Clone, Debug)]
pub struct Film {
    pub scale: Linear,
    pub shift: Linear,
    pub norm: LayerNorm,
    pub cond_dim: usize,
    pub feature_dim: usize,
}

impl Film {
    pub fn new(store: &mut ParamStore, name: &str, cond_dim: usize, feature_dim: usize) -> Result<Self> {
        Ok(Self {
            scale: Linear::zeros(store, &format!("{name}.r"), cond_dim, feature_dim)?,
            shift: Linear::zeros(store, &format!("{name}.h"), cond_dim, feature_dim)?,
            norm: LayerNorm::new(store, &format!("{name}.norm"), feature_dim)?,
            cond_dim,
            feature_dim,
        })
    }

    pub fn param_count(cond_dim: usize, feature_dim: usize) -> usize {
        2 * Linear::param_count(cond_dim, feature_dim) + LayerNorm::param_count(feature_dim)
    }

    /// `theta: [T, feature_dim]`, `cond: [cond_dim]`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, theta: Var, cond: Var) -> Result<Var> {
        if g.value(cond).len() != self.cond_dim {
            return shape_err(
                "film",
                format!("conditioning vector {:?}, expected {}", g.shape(cond), self.cond_dim),
            );
        }
        let r = self.scale.forward(g, store, cond)?;
        let h = self.shift.forward(g, store, cond)?;
        let modulated = g.mul_row(theta, r)?;
        let theta_hat = g.add(theta, modulated)?;
        let theta_hat = g.add_row(theta_hat, h)?;
        let normed = self.norm.forward(g, store, theta_hat)?;
        g.add(normed, theta)
    }
}
