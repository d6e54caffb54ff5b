//! Reverse-mode differentiation over dense n-dimensional arrays.
//!
//! A [`Tape`] records every operation executed on [`Tensor`] handles.
//! Nodes are appended in execution order, so walking the tape backwards
//! from a scalar root visits each operation exactly once after all of its
//! consumers. Gradients reaching a node along several paths are summed.
//!
//! Every operation checks its output for non-finite values and fails with
//! [`TensorError::NonFinite`] instead of letting NaN/Inf propagate.

mod linalg;
mod norm;
mod ops;
mod special;

pub mod gradcheck;

pub use linalg::{cholesky_lower, solve_lower_transposed};
pub use norm::BatchNormState;
pub use special::{normal_cdf, normal_pdf};
pub(crate) use ops::logistic;

use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use ndarray::{ArrayD, IxDyn};
use thiserror::Error;

use crate::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: {detail}")]
    Domain { op: &'static str, detail: String },
    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("cholesky: matrix is not positive definite (pivot {pivot} is {value})")]
    NotPositiveDefinite { pivot: usize, value: f64 },
    #[error("backward: root must be a scalar, got shape {shape:?}")]
    NonScalarRoot { shape: Vec<usize> },
}

pub type Result<T> = std::result::Result<T, TensorError>;

/// Computes gradients for the parents of one node, given the upstream
/// gradient and a flag per parent telling whether it needs one.
type BackwardFn<T> = Box<dyn Fn(&ArrayD<T>, &[bool]) -> Vec<Option<ArrayD<T>>>>;

struct Node<T: Scalar> {
    value: Rc<ArrayD<T>>,
    requires_grad: bool,
    parents: Vec<usize>,
    backward: Option<BackwardFn<T>>,
}

/// Append-only record of a differentiable computation.
pub struct Tape<T: Scalar> {
    nodes: RefCell<Vec<Node<T>>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Leaf that receives a gradient.
    pub fn param(&self, value: ArrayD<T>) -> Tensor<'_, T> {
        self.leaf(value, true)
    }

    /// Leaf that is treated as a constant.
    pub fn constant(&self, value: ArrayD<T>) -> Tensor<'_, T> {
        self.leaf(value, false)
    }

    pub fn scalar(&self, value: T) -> Tensor<'_, T> {
        self.constant(ArrayD::from_elem(IxDyn(&[]), value))
    }

    fn leaf(&self, value: ArrayD<T>, requires_grad: bool) -> Tensor<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            requires_grad,
            parents: Vec::new(),
            backward: None,
        });
        Tensor {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// Records the result of an operation. Fails if `value` holds a
    /// non-finite entry.
    pub(crate) fn push<F>(
        &self,
        op: &'static str,
        value: Rc<ArrayD<T>>,
        parents: &[Tensor<'_, T>],
        backward: F,
    ) -> Result<Tensor<'_, T>>
    where
        F: Fn(&ArrayD<T>, &[bool]) -> Vec<Option<ArrayD<T>>> + 'static,
    {
        if value.iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite { op });
        }
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad = parents.iter().any(|p| nodes[p.id].requires_grad);
        nodes.push(Node {
            value,
            requires_grad,
            parents: parents.iter().map(|p| p.id).collect(),
            backward: if requires_grad {
                Some(Box::new(backward))
            } else {
                None
            },
        });
        Ok(Tensor {
            tape: self,
            id: nodes.len() - 1,
        })
    }

    /// Propagates d(root)/d(node) to every node that requires a gradient.
    pub fn backward(&self, root: Tensor<'_, T>) -> Result<Gradients<T>> {
        let nodes = self.nodes.borrow();
        let root_value = &nodes[root.id].value;
        if root_value.len() != 1 {
            return Err(TensorError::NonScalarRoot {
                shape: root_value.shape().to_vec(),
            });
        }
        let mut pending: Vec<Option<ArrayD<T>>> = vec![None; root.id + 1];
        let mut leaves: Vec<Option<ArrayD<T>>> = vec![None; root.id + 1];
        if nodes[root.id].requires_grad {
            pending[root.id] = Some(ArrayD::from_elem(root_value.raw_dim(), T::one()));
        }
        let mut needs = Vec::new();
        for id in (0..=root.id).rev() {
            let Some(grad) = pending[id].take() else {
                continue;
            };
            let node = &nodes[id];
            let Some(backward) = &node.backward else {
                if node.requires_grad {
                    leaves[id] = Some(grad);
                }
                continue;
            };
            needs.clear();
            needs.extend(node.parents.iter().map(|&p| nodes[p].requires_grad));
            let parent_grads = backward(&grad, &needs);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for ((&parent, g), &need) in node.parents.iter().zip(parent_grads).zip(&needs) {
                let (Some(g), true) = (g, need) else {
                    continue;
                };
                debug_assert_eq!(g.shape(), nodes[parent].value.shape());
                match &mut pending[parent] {
                    Some(acc) => *acc += &g,
                    slot @ None => *slot = Some(g),
                }
            }
        }
        Ok(Gradients { grads: leaves })
    }
}

/// Gradients of a scalar root with respect to the tape's parameter leaves.
pub struct Gradients<T: Scalar> {
    grads: Vec<Option<ArrayD<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// `None` when the tensor is not a parameter leaf or does not reach the root.
    pub fn get(&self, t: Tensor<'_, T>) -> Option<&ArrayD<T>> {
        self.grads.get(t.id).and_then(Option::as_ref)
    }

    /// Gradient with zeros standing in for unreachable tensors.
    pub fn wrt(&self, t: Tensor<'_, T>) -> ArrayD<T> {
        self.get(t)
            .cloned()
            .unwrap_or_else(|| ArrayD::zeros(t.value().raw_dim()))
    }

    pub fn take(&mut self, t: Tensor<'_, T>) -> ArrayD<T> {
        self.grads
            .get_mut(t.id)
            .and_then(Option::take)
            .unwrap_or_else(|| ArrayD::zeros(t.value().raw_dim()))
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Tensor<'t, T: Scalar> {
    tape: &'t Tape<T>,
    id: usize,
}

impl<T: Scalar> fmt::Debug for Tensor<'_, T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

impl<'t, T: Scalar> Tensor<'t, T> {
    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn value(&self) -> Rc<ArrayD<T>> {
        Rc::clone(&self.tape.nodes.borrow()[self.id].value)
    }

    /// Owned copy of the value.
    pub fn array(&self) -> ArrayD<T> {
        (*self.value()).clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    /// The single entry of a one-element tensor.
    pub fn item(&self) -> T {
        let v = self.value();
        assert_eq!(v.len(), 1, "item() on tensor of shape {:?}", v.shape());
        *v.iter().next().unwrap()
    }
}

