use crate::error::{shape_err, Result};
use crate::graph::{Graph, Op, Var};
use crate::tensor::{matmul_acc, matmul_at_acc, matmul_bt_acc, Tensor};

/// Graph handles for one GRU layer. Gate blocks in the `3H` axis are
/// ordered reset, update, candidate.
#[derive(Clone, Copy, Debug)]
pub struct GruWeights {
    /// `[in, 3H]`
    pub w_ih: Var,
    /// `[H, 3H]`
    pub w_hh: Var,
    /// `[3H]`
    pub bias: Var,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

struct GruOp {
    steps: usize,
    input: usize,
    hidden: usize,
    /// per step: r, z, n, (W_hn·h_{t-1}) each of size H
    r: Vec<f64>,
    z: Vec<f64>,
    n: Vec<f64>,
    hn: Vec<f64>,
}

impl Op for GruOp {
    fn name(&self) -> &'static str {
        "gru"
    }

    fn backward(&self, inputs: &[&Tensor], out: &Tensor, grad: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let (x, h0, w_ih, w_hh) = (inputs[0], inputs[1], inputs[2], inputs[3]);
        let (t_len, ni, h) = (self.steps, self.input, self.hidden);
        let h3 = 3 * h;
        let mut dgi = vec![0.0; t_len * h3];
        let mut dw_hh = vec![0.0; h * h3];
        let mut db = vec![0.0; h3];
        let mut dh_next = vec![0.0; h];
        let mut dgh = vec![0.0; h3];

        for t in (0..t_len).rev() {
            let h_prev = if t == 0 {
                h0.data()
            } else {
                &out.data()[(t - 1) * h..t * h]
            };
            let rs = &self.r[t * h..(t + 1) * h];
            let zs = &self.z[t * h..(t + 1) * h];
            let ns = &self.n[t * h..(t + 1) * h];
            let hns = &self.hn[t * h..(t + 1) * h];
            let dgi_t = &mut dgi[t * h3..(t + 1) * h3];
            for j in 0..h {
                let dh = grad.data()[t * h + j] + dh_next[j];
                let dn = dh * (1.0 - zs[j]);
                let dz = dh * (h_prev[j] - ns[j]);
                dh_next[j] = dh * zs[j];
                let dan = dn * (1.0 - ns[j] * ns[j]);
                let dr = dan * hns[j];
                let dar = dr * rs[j] * (1.0 - rs[j]);
                let daz = dz * zs[j] * (1.0 - zs[j]);
                dgi_t[j] = dar;
                dgi_t[h + j] = daz;
                dgi_t[2 * h + j] = dan;
                dgh[j] = dar;
                dgh[h + j] = daz;
                dgh[2 * h + j] = dan * rs[j];
            }
            for k in 0..h3 {
                db[k] += dgi_t[k];
            }
            matmul_at_acc(h_prev, &dgh, &mut dw_hh, 1, h, h3);
            matmul_bt_acc(&dgh, w_hh.data(), &mut dh_next, 1, h, h3);
        }

        let gx = needs[0].then(|| {
            let mut gx = vec![0.0; t_len * ni];
            matmul_bt_acc(&dgi, w_ih.data(), &mut gx, t_len, ni, h3);
            Tensor::new(x.shape(), gx).unwrap()
        });
        let gh0 = needs[1].then(|| Tensor::new(h0.shape(), dh_next.clone()).unwrap());
        let gw_ih = needs[2].then(|| {
            let mut gw = vec![0.0; ni * h3];
            matmul_at_acc(x.data(), &dgi, &mut gw, t_len, ni, h3);
            Tensor::new(w_ih.shape(), gw).unwrap()
        });
        let gw_hh = needs[3].then(|| Tensor::new(w_hh.shape(), dw_hh).unwrap());
        let gb = needs[4].then(|| Tensor::new(inputs[4].shape(), db).unwrap());
        vec![gx, gh0, gw_ih, gw_hh, gb]
    }
}

impl Graph {
    /// Gated recurrent unit over `x: [T, in]` from initial state `h0: [H]`.
    ///
    /// ```text
    /// r = σ(W_ir x + W_hr h + b_r)
    /// z = σ(W_iz x + W_hz h + b_z)
    /// n = tanh(W_in x + b_n + r ⊙ (W_hn h))
    /// h' = (1 − z) ⊙ n + z ⊙ h
    /// ```
    ///
    /// Returns all hidden states, `[T, H]`.
    pub fn gru(&mut self, x: Var, h0: Var, w: GruWeights) -> Result<Var> {
        let tx = self.value(x);
        let th0 = self.value(h0);
        let tw_ih = self.value(w.w_ih);
        let tw_hh = self.value(w.w_hh);
        let tb = self.value(w.bias);
        let [t_len, ni] = *tx.shape() else {
            return shape_err("gru", format!("input {:?} must be [T, in]", tx.shape()));
        };
        let h = th0.len();
        let h3 = 3 * h;
        if tw_ih.shape() != [ni, h3] || tw_hh.shape() != [h, h3] || tb.len() != h3 {
            return shape_err(
                "gru",
                format!(
                    "input {:?}, h0 {:?}, w_ih {:?}, w_hh {:?}, bias {:?}",
                    tx.shape(),
                    th0.shape(),
                    tw_ih.shape(),
                    tw_hh.shape(),
                    tb.shape()
                ),
            );
        }
        let mut gi = vec![0.0; t_len * h3];
        matmul_acc(tx.data(), tw_ih.data(), &mut gi, t_len, ni, h3);

        let mut out = vec![0.0; t_len * h];
        let mut r = vec![0.0; t_len * h];
        let mut z = vec![0.0; t_len * h];
        let mut n = vec![0.0; t_len * h];
        let mut hn = vec![0.0; t_len * h];
        let mut gh = vec![0.0; h3];
        let mut h_prev = th0.data().to_vec();
        let b = tb.data();
        for t in 0..t_len {
            gh.iter_mut().for_each(|v| *v = 0.0);
            matmul_acc(&h_prev, tw_hh.data(), &mut gh, 1, h, h3);
            let gi_t = &gi[t * h3..(t + 1) * h3];
            for j in 0..h {
                let rj = sigmoid(gi_t[j] + gh[j] + b[j]);
                let zj = sigmoid(gi_t[h + j] + gh[h + j] + b[h + j]);
                let nj = (gi_t[2 * h + j] + b[2 * h + j] + rj * gh[2 * h + j]).tanh();
                let hj = (1.0 - zj) * nj + zj * h_prev[j];
                r[t * h + j] = rj;
                z[t * h + j] = zj;
                n[t * h + j] = nj;
                hn[t * h + j] = gh[2 * h + j];
                out[t * h + j] = hj;
            }
            h_prev.copy_from_slice(&out[t * h..(t + 1) * h]);
        }
        let out = Tensor::new(&[t_len, h], out)?;
        let op = GruOp {
            steps: t_len,
            input: ni,
            hidden: h,
            r,
            z,
            n,
            hn,
        };
        self.apply(op, &[x, h0, w.w_ih, w.w_hh, w.bias], out)
    }
}
