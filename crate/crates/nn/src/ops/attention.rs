use crate::error::{shape_err, Result};
use crate::graph::{Graph, Op, Var};
use crate::tensor::Tensor;

/// Row-softmax attention probabilities for every head, `[heads, T, T]`.
///
/// `q`, `k` are `[T, A]` with `A` split evenly into `heads` chunks; logits
/// are scaled by `1/√(A/heads)`. With `causal`, key frames after the query
/// frame get zero weight.
pub fn attention_weights(q: &Tensor, k: &Tensor, heads: usize, causal: bool) -> Vec<f64> {
    let [t_len, a] = *q.shape() else {
        panic!("attention_weights expects [T, A]")
    };
    let dh = a / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut p = vec![0.0; heads * t_len * t_len];
    let mut logits = vec![0.0; t_len];
    for hd in 0..heads {
        for i in 0..t_len {
            let qi = &q.data()[i * a + hd * dh..i * a + (hd + 1) * dh];
            let n_keys = if causal { i + 1 } else { t_len };
            let mut max = f64::NEG_INFINITY;
            for (j, l) in logits.iter_mut().enumerate().take(n_keys) {
                let kj = &k.data()[j * a + hd * dh..j * a + (hd + 1) * dh];
                *l = qi.iter().zip(kj).map(|(x, y)| x * y).sum::<f64>() * scale;
                max = max.max(*l);
            }
            let row = &mut p[(hd * t_len + i) * t_len..(hd * t_len + i + 1) * t_len];
            let mut total = 0.0;
            for j in 0..n_keys {
                let e = (logits[j] - max).exp();
                row[j] = e;
                total += e;
            }
            for v in row.iter_mut().take(n_keys) {
                *v /= total;
            }
        }
    }
    p
}

struct AttentionOp {
    heads: usize,
    steps: usize,
    dim: usize,
    probs: Vec<f64>,
}

impl Op for AttentionOp {
    fn name(&self) -> &'static str {
        "attention"
    }

    fn backward(&self, inputs: &[&Tensor], _out: &Tensor, grad: &Tensor, _needs: &[bool]) -> Vec<Option<Tensor>> {
        let (q, k, v) = (inputs[0].data(), inputs[1].data(), inputs[2].data());
        let (t_len, a, heads) = (self.steps, self.dim, self.heads);
        let dh = a / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let g = grad.data();
        let mut gq = vec![0.0; t_len * a];
        let mut gk = vec![0.0; t_len * a];
        let mut gv = vec![0.0; t_len * a];
        let mut dp = vec![0.0; t_len];
        for hd in 0..heads {
            let off = hd * dh;
            for i in 0..t_len {
                let p = &self.probs[(hd * t_len + i) * t_len..(hd * t_len + i + 1) * t_len];
                let gi = &g[i * a + off..i * a + off + dh];
                // dP[i, j] = <dO_i, V_j>
                let mut dot = 0.0;
                for j in 0..t_len {
                    if p[j] == 0.0 {
                        dp[j] = 0.0;
                        continue;
                    }
                    let vj = &v[j * a + off..j * a + off + dh];
                    dp[j] = gi.iter().zip(vj).map(|(x, y)| x * y).sum();
                    dot += dp[j] * p[j];
                    for (d, &gval) in gi.iter().enumerate() {
                        gv[j * a + off + d] += p[j] * gval;
                    }
                }
                for j in 0..t_len {
                    if p[j] == 0.0 {
                        continue;
                    }
                    let ds = p[j] * (dp[j] - dot) * scale;
                    for d in 0..dh {
                        gq[i * a + off + d] += ds * k[j * a + off + d];
                        gk[j * a + off + d] += ds * q[i * a + off + d];
                    }
                }
            }
        }
        let shape = inputs[0].shape();
        vec![
            Some(Tensor::new(shape, gq).unwrap()),
            Some(Tensor::new(shape, gk).unwrap()),
            Some(Tensor::new(shape, gv).unwrap()),
        ]
    }
}

impl Graph {
    /// Multi-head scaled dot-product attention core on projected
    /// `q`, `k`, `v: [T, A]`. Returns the concatenated head outputs `[T, A]`.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize, causal: bool) -> Result<Var> {
        let (tq, tk, tv) = (self.value(q), self.value(k), self.value(v));
        let [t_len, a] = *tq.shape() else {
            return shape_err("attention", format!("query {:?} must be [T, A]", tq.shape()));
        };
        if tk.shape() != tq.shape() || tv.shape() != tq.shape() {
            return shape_err(
                "attention",
                format!("q {:?}, k {:?}, v {:?}", tq.shape(), tk.shape(), tv.shape()),
            );
        }
        if heads == 0 || a % heads != 0 {
            return shape_err("attention", format!("dim {a} not divisible by {heads} heads"));
        }
        let dh = a / heads;
        let probs = attention_weights(tq, tk, heads, causal);
        let mut out = vec![0.0; t_len * a];
        for hd in 0..heads {
            for i in 0..t_len {
                let p = &probs[(hd * t_len + i) * t_len..(hd * t_len + i + 1) * t_len];
                let o = &mut out[i * a + hd * dh..i * a + (hd + 1) * dh];
                for (j, &pj) in p.iter().enumerate() {
                    if pj == 0.0 {
                        continue;
                    }
                    let vj = &tv.data()[j * a + hd * dh..j * a + (hd + 1) * dh];
                    for (ov, vv) in o.iter_mut().zip(vj) {
                        *ov += pj * vv;
                    }
                }
            }
        }
        let out = Tensor::new(&[t_len, a], out)?;
        let op = AttentionOp {
            heads,
            steps: t_len,
            dim: a,
            probs,
        };
        self.apply(op, &[q, k, v], out)
    }
}
