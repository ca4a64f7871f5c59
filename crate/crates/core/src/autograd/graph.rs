use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

use super::params::{ParamId, ParamStore};

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Inputs available to a backward rule.
pub struct BackwardCtx<'a, T: Scalar> {
    pub inputs: Vec<&'a Tensor<T>>,
    pub output: &'a Tensor<T>,
    /// Gradient of the loss with respect to `output`.
    pub grad: &'a [T],
    /// Which inputs actually need a gradient.
    pub needs: Vec<bool>,
}

/// Vector-Jacobian product of a recorded op.
pub trait Backward<T: Scalar> {
    fn name(&self) -> &'static str;

    /// One entry per input, `None` where `ctx.needs` is false.
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Vec<T>>>;
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    inputs: Vec<usize>,
    op: Option<Box<dyn Backward<T>>>,
    needs_grad: bool,
    param: Option<ParamId>,
}

/// Wengert list for one forward/backward invocation.
///
/// Nodes are appended in evaluation order, so the tape order is already a
/// topological order of the (acyclic) dependency graph.
pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Leaf whose gradient is collected when `tensor.requires_grad()`.
    pub fn leaf(&mut self, tensor: Tensor<T>) -> Var {
        let needs_grad = tensor.requires_grad();
        self.push_node(Node {
            value: tensor,
            inputs: Vec::new(),
            op: None,
            needs_grad,
            param: None,
        })
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, mut tensor: Tensor<T>) -> Var {
        tensor.set_requires_grad(false);
        self.leaf(tensor)
    }

    /// Leaf holding a snapshot of a stored parameter.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        let src = store.tensor(id);
        let mut value = Tensor::from_vec(src.shape(), src.data().to_vec()).expect("parameter shapes are validated at registration");
        value.set_requires_grad(true);
        self.push_node(Node {
            value,
            inputs: Vec::new(),
            op: None,
            needs_grad: true,
            param: Some(id),
        })
    }

    /// Records the result of an op. The backward rule is dropped when no
    /// input participates in differentiation.
    pub fn record(&mut self, value: Tensor<T>, inputs: &[Var], op: Box<dyn Backward<T>>) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.push_node(Node {
            value,
            inputs: inputs.iter().map(|v| v.0).collect(),
            op: needs_grad.then_some(op),
            needs_grad,
            param: None,
        })
    }

    fn push_node(&mut self, node: Node<T>) -> Var {
        self.nodes.push(node);
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Accumulated gradient of a leaf after [`Graph::backward`].
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].value.grad()
    }

    /// Clears leaf gradient accumulators.
    pub fn zero_grads(&mut self) {
        for n in &mut self.nodes {
            n.value.clear_grad();
        }
    }

    /// Reverse sweep from a scalar loss. Leaf gradients accumulate across calls.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(Error::contract(
                "backward",
                format!("loss must be scalar, got shape {:?}", self.shape(loss)),
            ));
        }
        if !self.nodes[loss.0].needs_grad {
            return Ok(());
        }
        let mut grads: Vec<Option<Vec<T>>> = Vec::new();
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let Some(op) = &node.op else {
                // leaf
                if node.needs_grad {
                    grads[i] = Some(g);
                }
                continue;
            };
            let ctx = BackwardCtx {
                inputs: node.inputs.iter().map(|&j| &self.nodes[j].value).collect(),
                output: &node.value,
                grad: &g,
                needs: node.inputs.iter().map(|&j| self.nodes[j].needs_grad).collect(),
            };
            let input_grads = op.backward(&ctx);
            debug_assert_eq!(input_grads.len(), node.inputs.len(), "{}", op.name());
            for (&j, ig) in node.inputs.iter().zip(input_grads) {
                let Some(ig) = ig else { continue };
                if !self.nodes[j].needs_grad {
                    continue;
                }
                debug_assert_eq!(ig.len(), self.nodes[j].value.numel(), "{}", op.name());
                match &mut grads[j] {
                    Some(acc) => acc.iter_mut().zip(&ig).for_each(|(a, &b)| *a += b),
                    slot @ None => *slot = Some(ig),
                }
            }
        }

        for (i, g) in grads.into_iter().enumerate() {
            if let Some(g) = g {
                self.nodes[i].value.accumulate_grad(&g);
            }
        }
        Ok(())
    }

    /// Adds every parameter leaf's gradient into the store.
    pub fn write_param_grads(&self, store: &mut ParamStore<T>) {
        for n in &self.nodes {
            if let (Some(id), Some(g)) = (n.param, n.value.grad()) {
                store.tensor_mut(id).accumulate_grad(g);
            }
        }
    }
}
