use crate::error::{shape_err, Result};
use crate::graph::{Graph, Op, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy)]
enum Binary {
    Add,
    Sub,
    Mul,
}

struct BinaryOp(Binary);

impl Op for BinaryOp {
    fn name(&self) -> &'static str {
        match self.0 {
            Binary::Add => "add",
            Binary::Sub => "sub",
            Binary::Mul => "mul",
        }
    }

    fn backward(&self, inputs: &[&Tensor], _out: &Tensor, grad: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let (a, b) = (inputs[0], inputs[1]);
        let mut ga = None;
        let mut gb = None;
        match self.0 {
            Binary::Add => {
                if needs[0] {
                    ga = Some(grad.clone().reshaped(a.shape()).unwrap());
                }
                if needs[1] {
                    gb = Some(grad.clone().reshaped(b.shape()).unwrap());
                }
            }
            Binary::Sub => {
                if needs[0] {
                    ga = Some(grad.clone().reshaped(a.shape()).unwrap());
                }
                if needs[1] {
                    let d = grad.data().iter().map(|g| -g).collect();
                    gb = Some(Tensor::new(b.shape(), d).unwrap());
                }
            }
            Binary::Mul => {
                if needs[0] {
                    let d = grad.data().iter().zip(b.data()).map(|(g, y)| g * y).collect();
                    ga = Some(Tensor::new(a.shape(), d).unwrap());
                }
                if needs[1] {
                    let d = grad.data().iter().zip(a.data()).map(|(g, x)| g * x).collect();
                    gb = Some(Tensor::new(b.shape(), d).unwrap());
                }
            }
        }
        vec![ga, gb]
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) enum Unary {
    Sigmoid,
    Tanh,
    Relu,
    LeakyRelu(f64),
    Softplus,
    Scale(f64),
}

struct UnaryOp(Unary);

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

impl Unary {
    fn forward(self, x: f64) -> f64 {
        match self {
            Unary::Sigmoid => sigmoid(x),
            Unary::Tanh => x.tanh(),
            Unary::Relu => x.max(0.0),
            Unary::LeakyRelu(slope) => {
                if x >= 0.0 {
                    x
                } else {
                    slope * x
                }
            }
            Unary::Softplus => softplus(x),
            Unary::Scale(c) => c * x,
        }
    }

    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Unary::Sigmoid => y * (1.0 - y),
            Unary::Tanh => 1.0 - y * y,
            Unary::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Unary::LeakyRelu(slope) => {
                if x >= 0.0 {
                    1.0
                } else {
                    slope
                }
            }
            Unary::Softplus => sigmoid(x),
            Unary::Scale(c) => c,
        }
    }
}

impl Op for UnaryOp {
    fn name(&self) -> &'static str {
        match self.0 {
            Unary::Sigmoid => "sigmoid",
            Unary::Tanh => "tanh",
            Unary::Relu => "relu",
            Unary::LeakyRelu(_) => "leaky_relu",
            Unary::Softplus => "softplus",
            Unary::Scale(_) => "scale",
        }
    }

    fn backward(&self, inputs: &[&Tensor], out: &Tensor, grad: &Tensor, _needs: &[bool]) -> Vec<Option<Tensor>> {
        let d = inputs[0]
            .data()
            .iter()
            .zip(out.data())
            .zip(grad.data())
            .map(|((&x, &y), &g)| g * self.0.derivative(x, y))
            .collect();
        vec![Some(Tensor::new(inputs[0].shape(), d).unwrap())]
    }
}

struct SumOp {
    mean: bool,
}

impl Op for SumOp {
    fn name(&self) -> &'static str {
        if self.mean {
            "mean"
        } else {
            "sum"
        }
    }

    fn backward(&self, inputs: &[&Tensor], _out: &Tensor, grad: &Tensor, _needs: &[bool]) -> Vec<Option<Tensor>> {
        let n = inputs[0].len();
        let mut g = grad.data()[0];
        if self.mean && n > 0 {
            g /= n as f64;
        }
        vec![Some(Tensor::full(inputs[0].shape(), g))]
    }
}

/// Row-broadcast binary op: `x: [.., D]` combined with `v: [D]`.
struct RowOp {
    mul: bool,
}

impl Op for RowOp {
    fn name(&self) -> &'static str {
        if self.mul {
            "mul_row"
        } else {
            "add_row"
        }
    }

    fn backward(&self, inputs: &[&Tensor], _out: &Tensor, grad: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let (x, v) = (inputs[0], inputs[1]);
        let d = v.len();
        let mut gx = None;
        let mut gv = None;
        if needs[0] {
            let data = if self.mul {
                grad.data()
                    .iter()
                    .enumerate()
                    .map(|(i, g)| g * v.data()[i % d])
                    .collect()
            } else {
                grad.data().to_vec()
            };
            gx = Some(Tensor::new(x.shape(), data).unwrap());
        }
        if needs[1] {
            let mut acc = vec![0.0; d];
            for (i, g) in grad.data().iter().enumerate() {
                acc[i % d] += if self.mul { g * x.data()[i] } else { *g };
            }
            gv = Some(Tensor::new(v.shape(), acc).unwrap());
        }
        vec![gx, gv]
    }
}

impl Graph {
    fn binary(&mut self, kind: Binary, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return shape_err(
                BinaryOp(kind).name(),
                format!("{:?} vs {:?}", ta.shape(), tb.shape()),
            );
        }
        let f: fn(f64, f64) -> f64 = match kind {
            Binary::Add => |x, y| x + y,
            Binary::Sub => |x, y| x - y,
            Binary::Mul => |x, y| x * y,
        };
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::new(ta.shape(), data)?;
        self.apply(BinaryOp(kind), &[a, b], out)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Mul, a, b)
    }

    pub(crate) fn unary(&mut self, kind: Unary, x: Var) -> Result<Var> {
        let t = self.value(x);
        let data = t.data().iter().map(|&v| kind.forward(v)).collect();
        let out = Tensor::new(t.shape(), data)?;
        self.apply(UnaryOp(kind), &[x], out)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Sigmoid, x)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Tanh, x)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Relu, x)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        self.unary(Unary::LeakyRelu(slope), x)
    }

    /// `ln(1 + eˣ)`, evaluated without overflow.
    pub fn softplus(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Softplus, x)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        self.unary(Unary::Scale(c), x)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).sum();
        self.apply(SumOp { mean: false }, &[x], Tensor::scalar(s))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let m = if t.is_empty() { 0.0 } else { t.sum() / t.len() as f64 };
        self.apply(SumOp { mean: true }, &[x], Tensor::scalar(m))
    }

    fn row_op(&mut self, mul: bool, x: Var, v: Var) -> Result<Var> {
        let (tx, tv) = (self.value(x), self.value(v));
        let d = tv.len();
        if tx.last_dim() != d {
            return shape_err(
                RowOp { mul }.name(),
                format!("{:?} with row vector of {d}", tx.shape()),
            );
        }
        let data = tx
            .data()
            .iter()
            .enumerate()
            .map(|(i, &a)| {
                let b = tv.data()[i % d];
                if mul {
                    a * b
                } else {
                    a + b
                }
            })
            .collect();
        let out = Tensor::new(tx.shape(), data)?;
        self.apply(RowOp { mul }, &[x, v], out)
    }

    /// `x[.., j] * v[j]`, broadcasting `v` over every leading index.
    pub fn mul_row(&mut self, x: Var, v: Var) -> Result<Var> {
        self.row_op(true, x, v)
    }

    /// `x[.., j] + v[j]`, broadcasting `v` over every leading index.
    pub fn add_row(&mut self, x: Var, v: Var) -> Result<Var> {
        self.row_op(false, x, v)
    }
}
