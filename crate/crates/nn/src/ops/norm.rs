use crate::error::{shape_err, Result};
use crate::graph::{Graph, Op, Var};
use crate::tensor::Tensor;

pub const LAYER_NORM_EPS: f64 = 1e-5;

struct LayerNormOp {
    dim: usize,
    /// normalized input, same layout as x
    xhat: Vec<f64>,
    /// 1/sqrt(var + eps) per row
    inv_std: Vec<f64>,
}

impl Op for LayerNormOp {
    fn name(&self) -> &'static str {
        "layer_norm"
    }

    fn backward(&self, inputs: &[&Tensor], _out: &Tensor, grad: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let d = self.dim;
        let gamma = inputs[1].data();
        let rows = self.inv_std.len();
        let mut gx = needs[0].then(|| vec![0.0; rows * d]);
        let mut gg = vec![0.0; d];
        let mut gb = vec![0.0; d];
        let mut dxhat = vec![0.0; d];
        for r in 0..rows {
            let g = &grad.data()[r * d..(r + 1) * d];
            let xh = &self.xhat[r * d..(r + 1) * d];
            for j in 0..d {
                gg[j] += g[j] * xh[j];
                gb[j] += g[j];
                dxhat[j] = g[j] * gamma[j];
            }
            if let Some(gx) = gx.as_mut() {
                let mean_d = dxhat.iter().sum::<f64>() / d as f64;
                let mean_dx = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                let s = self.inv_std[r];
                for j in 0..d {
                    gx[r * d + j] = s * (dxhat[j] - mean_d - xh[j] * mean_dx);
                }
            }
        }
        vec![
            gx.map(|v| Tensor::new(inputs[0].shape(), v).unwrap()),
            needs[1].then(|| Tensor::new(inputs[1].shape(), gg).unwrap()),
            needs[2].then(|| Tensor::new(inputs[2].shape(), gb).unwrap()),
        ]
    }
}

impl Graph {
    /// Normalize each trailing-axis vector to zero mean and unit (biased)
    /// variance, then apply `gain ⊙ x̂ + bias`. ε = 1e-5.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let tx = self.value(x);
        let d = tx.last_dim();
        let (tg, tb) = (self.value(gain), self.value(bias));
        if d == 0 || tg.len() != d || tb.len() != d {
            return shape_err(
                "layer_norm",
                format!("input {:?}, gain {:?}, bias {:?}", tx.shape(), tg.shape(), tb.shape()),
            );
        }
        let rows = tx.rows();
        let mut xhat = vec![0.0; rows * d];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; rows * d];
        for r in 0..rows {
            let row = &tx.data()[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let s = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[r] = s;
            for j in 0..d {
                let xh = (row[j] - mean) * s;
                xhat[r * d + j] = xh;
                out[r * d + j] = xh * tg.data()[j] + tb.data()[j];
            }
        }
        let out = Tensor::new(tx.shape(), out)?;
        self.apply(LayerNormOp { dim: d, xhat, inv_std }, &[x, gain, bias], out)
    }
}
