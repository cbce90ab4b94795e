use crate::error::{shape_err, Result};
use crate::graph::{Graph, Op, Var};
use crate::tensor::Tensor;

struct ReshapeOp;

impl Op for ReshapeOp {
    fn name(&self) -> &'static str {
        "reshape"
    }

    fn backward(&self, inputs: &[&Tensor], _out: &Tensor, grad: &Tensor, _needs: &[bool]) -> Vec<Option<Tensor>> {
        vec![Some(grad.clone().reshaped(inputs[0].shape()).unwrap())]
    }
}

/// Concatenation along the trailing axis. `widths[i]` is the trailing size of input i.
struct ConcatLastOp {
    widths: Vec<usize>,
}

impl Op for ConcatLastOp {
    fn name(&self) -> &'static str {
        "concat_last"
    }

    fn backward(&self, inputs: &[&Tensor], _out: &Tensor, grad: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let total: usize = self.widths.iter().sum();
        let rows = grad.len().checked_div(total).unwrap_or(0);
        let mut offset = 0;
        let mut out = Vec::with_capacity(inputs.len());
        for (i, &w) in self.widths.iter().enumerate() {
            if needs[i] {
                let mut d = Vec::with_capacity(rows * w);
                for r in 0..rows {
                    d.extend_from_slice(&grad.data()[r * total + offset..r * total + offset + w]);
                }
                out.push(Some(Tensor::new(inputs[i].shape(), d).unwrap()));
            } else {
                out.push(None);
            }
            offset += w;
        }
        out
    }
}

/// Concatenation along the leading axis.
struct ConcatFirstOp;

impl Op for ConcatFirstOp {
    fn name(&self) -> &'static str {
        "concat_first"
    }

    fn backward(&self, inputs: &[&Tensor], _out: &Tensor, grad: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let mut offset = 0;
        let mut out = Vec::with_capacity(inputs.len());
        for (t, &need) in inputs.iter().zip(needs) {
            let n = t.len();
            out.push(need.then(|| Tensor::new(t.shape(), grad.data()[offset..offset + n].to_vec()).unwrap()));
            offset += n;
        }
        out
    }
}

impl Graph {
    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshaped(shape)?;
        self.apply(ReshapeOp, &[x], out)
    }

    /// Concatenate tensors that agree on every axis but the last.
    pub fn concat_last(&mut self, xs: &[Var]) -> Result<Var> {
        let Some(&first) = xs.first() else {
            return shape_err("concat_last", "no inputs");
        };
        let lead = {
            let s = self.shape(first);
            s[..s.len().saturating_sub(1)].to_vec()
        };
        let mut widths = Vec::with_capacity(xs.len());
        for &x in xs {
            let s = self.shape(x);
            if s.len() != lead.len() + 1 || s[..lead.len()] != lead[..] {
                return shape_err("concat_last", format!("{s:?} vs leading {lead:?}"));
            }
            widths.push(*s.last().unwrap());
        }
        let total: usize = widths.iter().sum();
        let rows: usize = lead.iter().product();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&x, &w) in xs.iter().zip(&widths) {
                data.extend_from_slice(&self.value(x).data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        let out = Tensor::new(&shape, data)?;
        self.apply(ConcatLastOp { widths }, xs, out)
    }

    /// Concatenate tensors that agree on every axis but the first.
    pub fn concat_first(&mut self, xs: &[Var]) -> Result<Var> {
        let Some(&first) = xs.first() else {
            return shape_err("concat_first", "no inputs");
        };
        let tail = self.shape(first)[1..].to_vec();
        let mut lead = 0;
        let mut data = Vec::new();
        for &x in xs {
            let s = self.shape(x);
            if s.is_empty() || s[1..] != tail[..] {
                return shape_err("concat_first", format!("{s:?} vs trailing {tail:?}"));
            }
            lead += s[0];
            data.extend_from_slice(self.value(x).data());
        }
        let mut shape = vec![lead];
        shape.extend_from_slice(&tail);
        let out = Tensor::new(&shape, data)?;
        self.apply(ConcatFirstOp, xs, out)
    }
}
