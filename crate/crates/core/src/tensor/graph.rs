//! Computation-graph record and the reverse pass.

use std::collections::HashMap;
use std::sync::Arc;

use crate::error::{Error, Result};

use super::{Elem, Tensor, TensorId};

/// Module-defined differentiable operation (e.g. the selective scan or the
/// Fourier transforms). Keeps the built-in primitive set closed while letting
/// subsystems register their own backward rules.
pub trait CustomOp<E: Elem>: Send + Sync {
    fn name(&self) -> &'static str;
    /// Per-input gradients (None for non-differentiable inputs), given the
    /// recorded inputs, the op's output and the incoming gradient.
    fn backward(
        &self,
        inputs: &[Tensor<E>],
        output: &Tensor<E>,
        grad_out: &[E],
    ) -> Result<Vec<Option<Vec<E>>>>;
}

/// Recorded primitive application. Attribute-only payloads; bulky per-token
/// statistics (layer/batch norm) are saved at record time for the backward.
pub enum Op<E: Elem> {
    Conv2d { stride: (usize, usize), padding: (usize, usize), groups: usize },
    ConvTranspose2d { stride: (usize, usize), padding: (usize, usize), groups: usize },
    Linear,
    LayerNorm { eps: E, mean: Vec<E>, rstd: Vec<E> },
    BatchNorm { training: bool, mean: Vec<E>, rstd: Vec<E> },
    Relu,
    Silu,
    Sigmoid,
    Softplus,
    Exp,
    Abs,
    Sqrt,
    Softmax { axis: usize },
    Add,
    Sub,
    Mul,
    Div,
    Atan2,
    Scale { factor: E },
    Clamp { lo: E, hi: E },
    Reshape,
    Permute { perm: Vec<usize> },
    Concat { axis: usize },
    Slice { axis: usize, start: usize, end: usize },
    GlobalAvgPool,
    SumAll,
    MeanAll,
    Custom(Arc<dyn CustomOp<E>>),
}

impl<E: Elem> Op<E> {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Conv2d { .. } => "conv2d",
            Op::ConvTranspose2d { .. } => "conv_transpose2d",
            Op::Linear => "linear",
            Op::LayerNorm { .. } => "layer_norm",
            Op::BatchNorm { .. } => "batch_norm",
            Op::Relu => "relu",
            Op::Silu => "silu",
            Op::Sigmoid => "sigmoid",
            Op::Softplus => "softplus",
            Op::Exp => "exp",
            Op::Abs => "abs",
            Op::Sqrt => "sqrt",
            Op::Softmax { .. } => "softmax",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Div => "div",
            Op::Atan2 => "atan2",
            Op::Scale { .. } => "scale",
            Op::Clamp { .. } => "clamp",
            Op::Reshape => "reshape",
            Op::Permute { .. } => "permute",
            Op::Concat { .. } => "concat",
            Op::Slice { .. } => "slice",
            Op::GlobalAvgPool => "global_avg_pool",
            Op::SumAll => "sum_all",
            Op::MeanAll => "mean_all",
            Op::Custom(c) => c.name(),
        }
    }
}

/// Gradients keyed by tensor identity, as produced by [`backward`].
pub struct Gradients<E: Elem = f32> {
    map: HashMap<TensorId, Tensor<E>>,
}

impl<E: Elem> Gradients<E> {
    pub fn get(&self, t: &Tensor<E>) -> Option<&Tensor<E>> {
        self.map.get(&t.id())
    }

    pub fn by_id(&self, id: TensorId) -> Option<&Tensor<E>> {
        self.map.get(&id)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

/// Reverse topological order (consumers before producers after reversal):
/// iterative DFS post-order, inputs visited in declared order. The order is a
/// pure function of graph structure, so repeated runs accumulate identically.
fn topo_order<E: Elem>(root: &Tensor<E>) -> Vec<Tensor<E>> {
    let mut order: Vec<Tensor<E>> = Vec::new();
    let mut visited: HashMap<TensorId, ()> = HashMap::new();
    // (tensor, next-input-index)
    let mut stack: Vec<(Tensor<E>, usize)> = vec![(root.clone(), 0)];
    visited.insert(root.id(), ());
    while let Some((t, i)) = stack.pop() {
        let n_inputs = t.node().map_or(0, |n| n.inputs.len());
        if i < n_inputs {
            let child = t.node().unwrap().inputs[i].clone();
            stack.push((t, i + 1));
            if child.tracked() && !visited.contains_key(&child.id()) {
                visited.insert(child.id(), ());
                stack.push((child, 0));
            }
        } else {
            order.push(t);
        }
    }
    order
}

/// Reverse-mode pass from a scalar loss. Returns gradients for every tracked
/// leaf (`requires_grad`) reachable from `loss`.
pub fn backward<E: Elem>(loss: &Tensor<E>) -> Result<Gradients<E>> {
    if !loss.is_scalar() {
        return Err(Error::NonScalarLoss(loss.dims().to_vec()));
    }
    if loss.mark_backward_done() {
        return Err(Error::BackwardReplayed);
    }
    let order = topo_order(loss);
    let mut grads: HashMap<TensorId, Vec<E>> = HashMap::new();
    grads.insert(loss.id(), vec![E::one()]);

    let mut out = HashMap::new();
    for t in order.iter().rev() {
        let Some(g) = grads.remove(&t.id()) else { continue };
        if t.requires_grad() {
            let gt = Tensor::from_vec(t.dims(), g.clone())?;
            out.insert(t.id(), gt);
        }
        let Some(node) = t.node() else { continue };
        let input_grads = super::ops_basic::backward_rule(&node.op, &node.inputs, t, &g)?;
        debug_assert_eq!(input_grads.len(), node.inputs.len());
        for (input, ig) in node.inputs.iter().zip(input_grads) {
            let Some(ig) = ig else { continue };
            if !input.tracked() {
                continue;
            }
            debug_assert_eq!(ig.len(), input.len(), "gradient size mismatch for {}", node.op.name());
            match grads.get_mut(&input.id()) {
                Some(acc) => {
                    for (a, v) in acc.iter_mut().zip(&ig) {
                        *a = *a + *v;
                    }
                }
                None => {
                    grads.insert(input.id(), ig);
                }
            }
        }
    }
    Ok(Gradients { map: out })
}
