use crate::error::{shape_err, Result};
use crate::graph::{Graph, Op, Var};
use crate::tensor::{matmul_acc, matmul_at_acc, matmul_bt_acc, Tensor};

struct LinearOp {
    rows: usize,
    fan_in: usize,
    fan_out: usize,
    has_bias: bool,
}

impl Op for LinearOp {
    fn name(&self) -> &'static str {
        "linear"
    }

    fn backward(&self, inputs: &[&Tensor], _out: &Tensor, grad: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let (x, w) = (inputs[0], inputs[1]);
        let (rows, fi, fo) = (self.rows, self.fan_in, self.fan_out);
        let mut res = Vec::with_capacity(inputs.len());
        res.push(needs[0].then(|| {
            let mut gx = vec![0.0; rows * fi];
            matmul_bt_acc(grad.data(), w.data(), &mut gx, rows, fi, fo);
            Tensor::new(x.shape(), gx).unwrap()
        }));
        res.push(needs[1].then(|| {
            let mut gw = vec![0.0; fi * fo];
            matmul_at_acc(x.data(), grad.data(), &mut gw, rows, fi, fo);
            Tensor::new(w.shape(), gw).unwrap()
        }));
        if self.has_bias {
            res.push(needs[2].then(|| {
                let mut gb = vec![0.0; fo];
                for r in 0..rows {
                    for (b, g) in gb.iter_mut().zip(&grad.data()[r * fo..(r + 1) * fo]) {
                        *b += g;
                    }
                }
                Tensor::new(inputs[2].shape(), gb).unwrap()
            }));
        }
        res
    }
}

impl Graph {
    /// `x·W + b` over the trailing axis: `x: [.., in]`, `W: [in, out]`, `b: [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let tx = self.value(x);
        let tw = self.value(w);
        if tw.shape().len() != 2 || tx.last_dim() != tw.shape()[0] {
            return shape_err(
                "linear",
                format!("input {:?} with weight {:?}", tx.shape(), tw.shape()),
            );
        }
        let (fi, fo) = (tw.shape()[0], tw.shape()[1]);
        let rows = tx.rows();
        let mut out = vec![0.0; rows * fo];
        if let Some(b) = b {
            let tb = self.value(b);
            if tb.len() != fo {
                return shape_err("linear", format!("bias {:?} for {fo} outputs", tb.shape()));
            }
            for r in 0..rows {
                out[r * fo..(r + 1) * fo].copy_from_slice(tb.data());
            }
        }
        matmul_acc(tx.data(), tw.data(), &mut out, rows, fi, fo);
        let mut shape = tx.shape().to_vec();
        if shape.is_empty() {
            shape.push(fo);
        } else {
            *shape.last_mut().unwrap() = fo;
        }
        let out = Tensor::new(&shape, out)?;
        let op = LinearOp {
            rows,
            fan_in: fi,
            fan_out: fo,
            has_bias: b.is_some(),
        };
        match b {
            Some(b) => self.apply(op, &[x, w, b], out),
            None => self.apply(op, &[x, w], out),
        }
    }
}
