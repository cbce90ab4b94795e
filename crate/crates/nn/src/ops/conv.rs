use crate::error::{shape_err, Result};
use crate::graph::{Graph, Op, Var};
use crate::tensor::Tensor;

struct Conv1dOp {
    batch: usize,
    c_in: usize,
    c_out: usize,
    len: usize,
    kernel: usize,
}

impl Conv1dOp {
    fn pad(&self) -> usize {
        (self.kernel - 1) / 2
    }

    /// Index into the input for output position `l` and tap `j`, if inside.
    #[inline]
    fn src(&self, l: usize, j: usize) -> Option<usize> {
        let p = l + j;
        let pad = self.pad();
        (p >= pad && p - pad < self.len).then(|| p - pad)
    }
}

impl Op for Conv1dOp {
    fn name(&self) -> &'static str {
        "conv1d"
    }

    fn backward(&self, inputs: &[&Tensor], _out: &Tensor, grad: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let (x, w) = (inputs[0], inputs[1]);
        let (ci, co, len, k) = (self.c_in, self.c_out, self.len, self.kernel);
        let mut gx = needs[0].then(|| vec![0.0; x.len()]);
        let mut gw = needs[1].then(|| vec![0.0; w.len()]);
        let mut gb = needs[2].then(|| vec![0.0; co]);
        let g = grad.data();
        for bi in 0..self.batch {
            let xb = &x.data()[bi * ci * len..(bi + 1) * ci * len];
            let gbatch = &g[bi * co * len..(bi + 1) * co * len];
            for o in 0..co {
                let grow = &gbatch[o * len..(o + 1) * len];
                if let Some(gb) = gb.as_mut() {
                    gb[o] += grow.iter().sum::<f64>();
                }
                for c in 0..ci {
                    let wrow = &w.data()[(o * ci + c) * k..(o * ci + c + 1) * k];
                    for (l, &gv) in grow.iter().enumerate() {
                        if gv == 0.0 {
                            continue;
                        }
                        for j in 0..k {
                            if let Some(s) = self.src(l, j) {
                                if let Some(gw) = gw.as_mut() {
                                    gw[(o * ci + c) * k + j] += gv * xb[c * len + s];
                                }
                                if let Some(gx) = gx.as_mut() {
                                    gx[bi * ci * len + c * len + s] += gv * wrow[j];
                                }
                            }
                        }
                    }
                }
            }
        }
        vec![
            gx.map(|d| Tensor::new(x.shape(), d).unwrap()),
            gw.map(|d| Tensor::new(w.shape(), d).unwrap()),
            gb.map(|d| Tensor::new(inputs[2].shape(), d).unwrap()),
        ]
    }
}

impl Graph {
    /// Stride-1 cross-correlation with zero "same" padding.
    ///
    /// `x: [B, C_in, L]` or `[C_in, L]`, `w: [C_out, C_in, K]` with odd `K`,
    /// `b: [C_out]`. The output keeps the input's rank with `C_out` channels.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let tx = self.value(x);
        let tw = self.value(w);
        let tb = self.value(b);
        let (batch, c_in, len) = match *tx.shape() {
            [c, l] => (1, c, l),
            [bsz, c, l] => (bsz, c, l),
            _ => return shape_err("conv1d", format!("input {:?}", tx.shape())),
        };
        let [c_out, wc_in, kernel] = *tw.shape() else {
            return shape_err("conv1d", format!("weight {:?}", tw.shape()));
        };
        if wc_in != c_in || tb.len() != c_out {
            return shape_err(
                "conv1d",
                format!("input {:?}, weight {:?}, bias {:?}", tx.shape(), tw.shape(), tb.shape()),
            );
        }
        if kernel % 2 == 0 {
            return shape_err("conv1d", format!("kernel length {kernel} must be odd"));
        }
        let op = Conv1dOp {
            batch,
            c_in,
            c_out,
            len,
            kernel,
        };
        let mut out = vec![0.0; batch * c_out * len];
        for bi in 0..batch {
            let xb = &tx.data()[bi * c_in * len..(bi + 1) * c_in * len];
            for o in 0..c_out {
                let orow = &mut out[(bi * c_out + o) * len..(bi * c_out + o + 1) * len];
                orow.iter_mut().for_each(|v| *v = tb.data()[o]);
                for c in 0..c_in {
                    let wrow = &tw.data()[(o * c_in + c) * kernel..(o * c_in + c + 1) * kernel];
                    for (l, ov) in orow.iter_mut().enumerate() {
                        let mut acc = 0.0;
                        for (j, &wv) in wrow.iter().enumerate() {
                            if let Some(s) = op.src(l, j) {
                                acc += wv * xb[c * len + s];
                            }
                        }
                        *ov += acc;
                    }
                }
            }
        }
        let shape = if tx.shape().len() == 2 {
            vec![c_out, len]
        } else {
            vec![batch, c_out, len]
        };
        let out = Tensor::new(&shape, out)?;
        self.apply(op, &[x, w, b], out)
    }
}
