use crate::error::{NnError, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Backward rule of a recorded operation.
///
/// `inputs` are the values of the op's inputs in the order they were
/// recorded, `grad` is dL/d(output). Implementations return one entry per
/// input and may return `None` wherever `needs[i]` is false.
pub trait Op {
    fn name(&self) -> &'static str;

    fn backward(
        &self,
        inputs: &[&Tensor],
        output: &Tensor,
        grad: &Tensor,
        needs: &[bool],
    ) -> Vec<Option<Tensor>>;
}

struct Node {
    value: Tensor,
    inputs: Vec<Var>,
    op: Option<Box<dyn Op>>,
    requires_grad: bool,
    param: Option<ParamId>,
}

/// Tape of one forward pass. Nodes are appended in evaluation order and
/// backward walks them in reverse, so gradient accumulation order is fixed.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
    consumed: bool,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            inputs: Vec::new(),
            op: None,
            requires_grad: false,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf bound to a stored parameter. Repeated calls for the same id
    /// return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if id.0 >= self.param_vars.len() {
            self.param_vars.resize(id.0 + 1, None);
        }
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        self.nodes.push(Node {
            value: store.get(id).value.clone(),
            inputs: Vec::new(),
            op: None,
            requires_grad: true,
            param: Some(id),
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.0] = Some(v);
        v
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Record an op whose forward value has already been computed.
    pub fn apply(&mut self, op: impl Op + 'static, inputs: &[Var], value: Tensor) -> Result<Var> {
        if !value.is_finite() {
            return Err(NnError::NonFinite { op: op.name() });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            inputs: inputs.to_vec(),
            op: Some(Box::new(op)),
            requires_grad,
            param: None,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Accumulate d(loss)/d(param) into every reachable parameter's `grad`.
    pub fn backward(&mut self, loss: Var, store: &mut ParamStore) -> Result<()> {
        if self.consumed {
            return Err(NnError::BackwardTwice);
        }
        let loss_value = &self.nodes[loss.0].value;
        if loss_value.len() != 1 {
            return Err(NnError::NonScalarLoss(loss_value.shape().to_vec()));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(loss_value.shape(), 1.0));

        for i in (0..=loss.0).rev() {
            let Some(grad) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if let Some(pid) = node.param {
                store.get_mut(pid).grad.add_assign(&grad);
                continue;
            }
            let Some(op) = &node.op else { continue };
            let inputs: Vec<&Tensor> = node.inputs.iter().map(|v| &self.nodes[v.0].value).collect();
            let needs: Vec<bool> = node
                .inputs
                .iter()
                .map(|v| self.nodes[v.0].requires_grad)
                .collect();
            let input_grads = op.backward(&inputs, &node.value, &grad, &needs);
            debug_assert_eq!(input_grads.len(), node.inputs.len(), "{}", op.name());
            for ((v, g), need) in node.inputs.iter().zip(input_grads).zip(needs) {
                let (Some(g), true) = (g, need) else { continue };
                debug_assert_eq!(g.len(), self.nodes[v.0].value.len(), "{}", op.name());
                match &mut grads[v.0] {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backward_twice_is_an_error() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::from_vec(vec![1.0, 2.0])).unwrap();
        let mut g = Graph::new();
        let wv = g.param(&store, w);
        let loss = g.sum(wv).unwrap();
        g.backward(loss, &mut store).unwrap();
        assert!(matches!(g.backward(loss, &mut store), Err(NnError::BackwardTwice)));
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::from_vec(vec![1.0, 2.0])).unwrap();
        let mut g = Graph::new();
        let wv = g.param(&store, w);
        assert!(matches!(
            g.backward(wv, &mut store),
            Err(NnError::NonScalarLoss(_))
        ));
    }

    #[test]
    fn param_off_loss_path_gets_zero_grad() {
        let mut store = ParamStore::new();
        let a = store.add("a", Tensor::from_vec(vec![1.0, 2.0])).unwrap();
        let b = store.add("b", Tensor::from_vec(vec![3.0])).unwrap();
        let mut g = Graph::new();
        let av = g.param(&store, a);
        let _bv = g.param(&store, b);
        let loss = g.sum(av).unwrap();
        g.backward(loss, &mut store).unwrap();
        assert_eq!(store.get(a).grad.data(), &[1.0, 1.0]);
        assert_eq!(store.get(b).grad.data(), &[0.0]);
    }

    #[test]
    fn nan_is_rejected_at_the_op() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_vec(vec![-1.0]));
        let bad = g.constant(Tensor::from_vec(vec![f64::NAN]));
        assert!(g.add(x, bad).is_err());
    }
}
