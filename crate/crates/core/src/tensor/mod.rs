//! Dense row-major tensors (layout N,C,H,W) with define-by-run reverse-mode
//! autodiff over the closed primitive set the networks need.
//!
//! A [`Tensor`] is an immutable value. Primitives produce new tensors; when
//! any input is tracked (a `requires_grad` leaf or derived from one) the
//! producing op and its inputs are recorded on the output, so the tensor DAG
//! *is* the computation graph. [`backward`] walks it once in reverse
//! topological order with a fixed traversal, making gradient accumulation
//! bit-reproducible.

mod elem;
pub mod gradcheck;
mod graph;
pub mod init;
mod matmul;
pub mod optim;
mod ops_basic;
mod ops_nn;
mod ops_shape;
mod params;
mod shape;

pub use elem::Elem;
pub use gradcheck::grad_check;
pub use graph::{backward, CustomOp, Gradients, Op};
pub use init::Prng;
pub use optim::{adam_step, cosine_lr, AdamConfig, AdamState};
pub use params::ParamSet;

use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;

use crate::error::{Error, Result};

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

/// Graph-unique tensor identity, allocated in creation order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TensorId(u64);

pub(crate) struct Node<E: Elem> {
    pub op: Op<E>,
    pub inputs: Vec<Tensor<E>>,
}

struct Inner<E: Elem> {
    id: TensorId,
    dims: Vec<usize>,
    data: Arc<Vec<E>>,
    node: Option<Node<E>>,
    requires_grad: bool,
    backward_done: AtomicBool,
}

/// Rank-≤4 dense tensor of `E` values, row-major.
pub struct Tensor<E: Elem = f32> {
    inner: Arc<Inner<E>>,
}

impl<E: Elem> Clone for Tensor<E> {
    fn clone(&self) -> Self {
        Tensor { inner: Arc::clone(&self.inner) }
    }
}

impl<E: Elem> std::fmt::Debug for Tensor<E> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "Tensor(id={:?}, dims={:?}, grad={}, tracked={})",
            self.inner.id,
            self.inner.dims,
            self.inner.requires_grad,
            self.tracked()
        )
    }
}

pub(crate) fn check_dims(op: &'static str, dims: &[usize]) -> Result<()> {
    if dims.is_empty() || dims.len() > 4 {
        return Err(Error::shape(op, format!("rank must be 1..=4, got {:?}", dims)));
    }
    Ok(())
}

impl<E: Elem> Tensor<E> {
    fn build(dims: Vec<usize>, data: Vec<E>, node: Option<Node<E>>, requires_grad: bool) -> Self {
        debug_assert_eq!(dims.iter().product::<usize>(), data.len());
        Tensor {
            inner: Arc::new(Inner {
                id: TensorId(NEXT_ID.fetch_add(1, Ordering::Relaxed)),
                dims,
                data: Arc::new(data),
                node,
                requires_grad,
                backward_done: AtomicBool::new(false),
            }),
        }
    }

    /// New leaf tensor from raw row-major data.
    pub fn from_vec(dims: &[usize], data: Vec<E>) -> Result<Self> {
        check_dims("from_vec", dims)?;
        if dims.iter().product::<usize>() != data.len() {
            return Err(Error::shape(
                "from_vec",
                format!("dims {:?} imply {} elements, got {}", dims, dims.iter().product::<usize>(), data.len()),
            ));
        }
        Ok(Self::build(dims.to_vec(), data, None, false))
    }

    pub fn zeros(dims: &[usize]) -> Result<Self> {
        check_dims("zeros", dims)?;
        Ok(Self::build(dims.to_vec(), vec![E::zero(); dims.iter().product()], None, false))
    }

    pub fn full(dims: &[usize], value: E) -> Result<Self> {
        check_dims("full", dims)?;
        Ok(Self::build(dims.to_vec(), vec![value; dims.iter().product()], None, false))
    }

    pub fn scalar(value: E) -> Self {
        Self::build(vec![1], vec![value], None, false)
    }

    /// Mark this leaf as a trainable variable. Gradients accumulate here.
    pub fn with_grad(self) -> Self {
        // Leaves only; a recorded node would make the flag ambiguous.
        debug_assert!(self.inner.node.is_none(), "with_grad on a non-leaf tensor");
        Tensor {
            inner: Arc::new(Inner {
                id: TensorId(NEXT_ID.fetch_add(1, Ordering::Relaxed)),
                dims: self.inner.dims.clone(),
                data: Arc::clone(&self.inner.data),
                node: None,
                requires_grad: true,
                backward_done: AtomicBool::new(false),
            }),
        }
    }

    /// Cut the tensor out of the graph: same data, fresh untracked leaf.
    pub fn detach(&self) -> Self {
        Tensor {
            inner: Arc::new(Inner {
                id: TensorId(NEXT_ID.fetch_add(1, Ordering::Relaxed)),
                dims: self.inner.dims.clone(),
                data: Arc::clone(&self.inner.data),
                node: None,
                requires_grad: false,
                backward_done: AtomicBool::new(false),
            }),
        }
    }

    /// Elementwise precision conversion; output is an untracked leaf.
    pub fn cast<F: Elem>(&self) -> Tensor<F> {
        let data: Vec<F> = self.data().iter().map(|v| F::from_f(v.f64())).collect();
        Tensor::<F>::build(self.inner.dims.clone(), data, None, false)
    }

    /// Record the result of a primitive. The op is kept only when some input
    /// is tracked; otherwise the output is a plain leaf (pruned graph).
    pub(crate) fn from_op(dims: Vec<usize>, data: Vec<E>, op: Op<E>, inputs: Vec<Tensor<E>>) -> Self {
        #[cfg(debug_assertions)]
        {
            debug_assert!(
                data.iter().all(|v| v.is_finite()),
                "non-finite value in output of {}",
                op.name()
            );
        }
        let tracked = inputs.iter().any(|t| t.tracked());
        let node = if tracked { Some(Node { op, inputs }) } else { None };
        Self::build(dims, data, node, false)
    }

    pub fn dims(&self) -> &[usize] {
        &self.inner.dims
    }

    pub fn rank(&self) -> usize {
        self.inner.dims.len()
    }

    pub fn len(&self) -> usize {
        self.inner.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inner.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.len() == 1
    }

    pub fn data(&self) -> &[E] {
        &self.inner.data
    }

    /// Value of a scalar tensor.
    pub fn item(&self) -> Result<E> {
        if !self.is_scalar() {
            return Err(Error::shape("item", format!("expected scalar, got {:?}", self.dims())));
        }
        Ok(self.inner.data[0])
    }

    pub fn id(&self) -> TensorId {
        self.inner.id
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    /// True when gradients flow through or into this tensor.
    pub fn tracked(&self) -> bool {
        self.inner.requires_grad || self.inner.node.is_some()
    }

    pub(crate) fn node(&self) -> Option<&Node<E>> {
        self.inner.node.as_ref()
    }

    pub(crate) fn mark_backward_done(&self) -> bool {
        self.inner.backward_done.swap(true, Ordering::SeqCst)
    }

    pub(crate) fn view_with_dims(&self, dims: Vec<usize>, op: Op<E>, inputs: Vec<Tensor<E>>) -> Self {
        let tracked = inputs.iter().any(|t| t.tracked());
        let node = if tracked { Some(Node { op, inputs }) } else { None };
        Tensor {
            inner: Arc::new(Inner {
                id: TensorId(NEXT_ID.fetch_add(1, Ordering::Relaxed)),
                dims,
                data: Arc::clone(&self.inner.data),
                node,
                requires_grad: false,
                backward_done: AtomicBool::new(false),
            }),
        }
    }
}
