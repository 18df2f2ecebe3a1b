use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use super::ops::Op;
use super::Tensor;
use crate::error::{FreaError, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

pub(crate) struct Node {
    pub value: Tensor,
    pub op: Op,
    pub requires_grad: bool,
}

/// Ordered record of executed operations.
///
/// Leaves created with [`Tape::param`] receive gradients on
/// [`Tape::backward`]; gradients accumulate across calls until
/// [`Tape::zero_grad`].
#[derive(Default)]
pub struct Tape {
    pub(crate) nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// A constant input; no gradient is tracked.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_node(value, Op::Leaf, false)
    }

    /// A trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push_node(value, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a trainable leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of a trainable leaf, or zeros of its shape if none flowed to it.
    pub fn grad_or_zeros(&self, v: Var) -> Tensor {
        self.grad(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(self.value(v).shape()))
    }

    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub(crate) fn push(&mut self, value: Tensor, op: Op) -> Var {
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.push_node(value, op, requires_grad)
    }

    fn push_node(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    /// Reverse sweep from a scalar `loss`, accumulating into leaf gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(FreaError::shape(
                "backward",
                format!("loss must be scalar, got shape {:?}", self.value(loss).shape()),
            ));
        }
        let mut adjoints: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        adjoints[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = adjoints[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                let shape = node.value.shape().to_vec();
                match &mut self.grads[idx] {
                    Some(acc) => acc
                        .data_mut()
                        .iter_mut()
                        .zip(&g)
                        .for_each(|(a, b)| *a += b),
                    slot => *slot = Some(Tensor::new(shape, g)?),
                }
                continue;
            }
            for (input, contribution) in node.op.backward(&self.nodes, idx, &g) {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                match &mut adjoints[input.0] {
                    Some(acc) => acc
                        .iter_mut()
                        .zip(&contribution)
                        .for_each(|(a, b)| *a += b),
                    slot => *slot = Some(contribution),
                }
            }
        }
        Ok(())
    }

    /// Hash of every non-smooth branch decision taken by the recorded ops
    /// (ReLU masks, L1 signs). Two evaluations with equal signatures lie in
    /// the same smooth piece of the loss, which is what a finite-difference
    /// check needs.
    pub fn kink_signature(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for node in &self.nodes {
            match &node.op {
                Op::Relu { x } => {
                    for &v in self.value(*x).data() {
                        (v > 0.0).hash(&mut h);
                    }
                }
                Op::MaeLoss { pred, target } => {
                    for (&p, &t) in self.value(*pred).data().iter().zip(target.data()) {
                        (p - t).partial_cmp(&0.0).hash(&mut h);
                    }
                }
                _ => {}
            }
        }
        h.finish()
    }
}
