//! Minimal reverse-mode differentiation over dense n-dimensional arrays.
//!
//! A [`Tensor`] is a reference-counted node. Operations on tracked tensors
//! record a backward closure together with their parents; [`Tensor::backward`]
//! walks that DAG in reverse topological order and accumulates gradients into
//! the leaves that require them. Intermediate gradients are not retained.
//!
//! Everything is generic over [`Scalar`], so the same kernels run in `f32`
//! for training and in `f64` for finite-difference verification.

mod checkpoint;
mod conv;
pub mod gradcheck;
mod layers;
mod ops;
mod optim;

pub use checkpoint::{Checkpoint, CheckpointEntry, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use conv::{
    conv2d, conv3d, inflate_2d_to_3d, Conv3dConfig, ConvWeights2D, ConvWeights3D, InflationMode,
    TemporalPadding,
};
pub use layers::{batch_norm, global_avg_pool, linear, max_pool2d, max_pool3d, BatchNormState};
pub use ops::{cross_entropy, log_softmax, soft_cross_entropy, softmax, softmax_values};
pub use optim::{sgd_update, Sgd, SgdConfig};

use std::cell::{Cell, Ref, RefCell};
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::rc::Rc;

use thiserror::Error;

use crate::Scalar;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("data length {len} does not match shape {shape:?}")]
    DataLength { len: usize, shape: Vec<usize> },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("loss is not connected to any tracked tensor")]
    Untracked,
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, TensorError>;

pub(crate) fn shape_err<T>(op: &'static str, detail: impl Into<String>) -> Result<T> {
    Err(TensorError::Shape {
        op,
        detail: detail.into(),
    })
}

/// Gradient of one parent, or `None` when that parent is not tracked.
pub(crate) type ParentGrads<T> = Vec<Option<Vec<T>>>;

struct GradFn<T: Scalar> {
    parents: Vec<Tensor<T>>,
    backward: Box<dyn Fn(&[T]) -> ParentGrads<T>>,
}

struct Node<T: Scalar> {
    shape: Vec<usize>,
    data: RefCell<Vec<T>>,
    grad: RefCell<Option<Vec<T>>>,
    requires_grad: Cell<bool>,
    grad_fn: Option<GradFn<T>>,
    op: &'static str,
}

pub struct Tensor<T: Scalar>(Rc<Node<T>>);

impl<T: Scalar> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor(Rc::clone(&self.0))
    }
}

impl<T: Scalar> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "Tensor({:?}, op={}, requires_grad={})",
            self.0.shape,
            self.0.op,
            self.requires_grad()
        )
    }
}

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Scalar> Tensor<T> {
    fn leaf(shape: Vec<usize>, data: Vec<T>, requires_grad: bool) -> Self {
        Tensor(Rc::new(Node {
            shape,
            data: RefCell::new(data),
            grad: RefCell::new(None),
            requires_grad: Cell::new(requires_grad),
            grad_fn: None,
            op: "leaf",
        }))
    }

    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        if numel(shape) != data.len() {
            return Err(TensorError::DataLength {
                len: data.len(),
                shape: shape.to_vec(),
            });
        }
        Ok(Self::leaf(shape.to_vec(), data, false))
    }

    /// A tracked leaf, e.g. a trainable parameter.
    pub fn param(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let t = Self::new(shape, data)?;
        t.set_requires_grad(true);
        Ok(t)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        Self::leaf(shape.to_vec(), vec![value; numel(shape)], false)
    }

    pub fn scalar(value: T) -> Self {
        Self::leaf(vec![], vec![value], false)
    }

    pub fn from_f64(shape: &[usize], data: &[f64]) -> Result<Self> {
        Self::new(shape, data.iter().map(|&v| T::of(v)).collect())
    }

    /// Result of an operation. The backward closure is kept only if some
    /// parent is tracked.
    pub(crate) fn from_op(
        op: &'static str,
        shape: Vec<usize>,
        data: Vec<T>,
        parents: Vec<Tensor<T>>,
        backward: impl Fn(&[T]) -> ParentGrads<T> + 'static,
    ) -> Self {
        debug_assert_eq!(numel(&shape), data.len(), "{op}");
        let tracked = parents.iter().any(Tensor::requires_grad);
        let grad_fn = tracked.then(|| GradFn {
            parents,
            backward: Box::new(backward),
        });
        Tensor(Rc::new(Node {
            shape,
            data: RefCell::new(data),
            grad: RefCell::new(None),
            requires_grad: Cell::new(tracked),
            grad_fn,
            op,
        }))
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn rank(&self) -> usize {
        self.0.shape.len()
    }

    pub fn numel(&self) -> usize {
        numel(&self.0.shape)
    }

    pub fn data(&self) -> Ref<'_, Vec<T>> {
        self.0.data.borrow()
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.0.data.borrow().clone()
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.0.data.borrow().iter().map(|v| v.as_f64()).collect()
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> T {
        let d = self.0.data.borrow();
        assert_eq!(d.len(), 1, "item() on tensor of shape {:?}", self.0.shape);
        d[0]
    }

    /// Overwrites the values in place. Only meaningful for leaves
    /// (parameters, running statistics).
    pub fn set_data(&self, data: Vec<T>) -> Result<()> {
        if data.len() != self.numel() {
            return Err(TensorError::DataLength {
                len: data.len(),
                shape: self.0.shape.clone(),
            });
        }
        *self.0.data.borrow_mut() = data;
        Ok(())
    }

    pub(crate) fn data_mut(&self) -> std::cell::RefMut<'_, Vec<T>> {
        self.0.data.borrow_mut()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad.get()
    }

    /// Marks a leaf as tracked or frozen. Frozen leaves never receive
    /// gradients and make downstream operations untracked.
    pub fn set_requires_grad(&self, flag: bool) {
        assert!(self.0.grad_fn.is_none(), "requires_grad is only settable on leaves");
        self.0.requires_grad.set(flag);
    }

    pub fn is_leaf(&self) -> bool {
        self.0.grad_fn.is_none()
    }

    pub fn grad(&self) -> Option<Vec<T>> {
        self.0.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    /// Copy of the values with no graph attached.
    pub fn detach(&self) -> Self {
        Self::leaf(self.0.shape.clone(), self.to_vec(), false)
    }

    /// Deep copy of a leaf, keeping its tracking flag but not its gradient.
    pub fn deep_clone(&self) -> Self {
        Self::leaf(self.0.shape.clone(), self.to_vec(), self.requires_grad())
    }

    pub fn ptr_eq(&self, other: &Tensor<T>) -> bool {
        Rc::ptr_eq(&self.0, &other.0)
    }

    fn key(&self) -> *const Node<T> {
        Rc::as_ptr(&self.0)
    }

    fn accumulate_grad(&self, g: &[T]) {
        let mut slot = self.0.grad.borrow_mut();
        match slot.as_mut() {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, &b)| *a += b),
            None => *slot = Some(g.to_vec()),
        }
    }

    /// Reverse-mode sweep from a scalar loss. Gradients are accumulated into
    /// every tracked leaf reachable from `self`.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(TensorError::NonScalarLoss(self.0.shape.clone()));
        }
        if !self.requires_grad() {
            return Err(TensorError::Untracked);
        }

        // Post-order DFS; every node appears after all of its parents.
        let mut order: Vec<Tensor<T>> = Vec::new();
        let mut visited: HashSet<*const Node<T>> = HashSet::new();
        let mut stack: Vec<(Tensor<T>, usize)> = vec![(self.clone(), 0)];
        visited.insert(self.key());
        while let Some((node, next)) = stack.pop() {
            let parents = node.0.grad_fn.as_ref().map(|g| g.parents.as_slice()).unwrap_or(&[]);
            if next < parents.len() {
                let parent = parents[next].clone();
                stack.push((node, next + 1));
                if parent.requires_grad() && !visited.contains(&parent.key()) {
                    visited.insert(parent.key());
                    stack.push((parent, 0));
                }
            } else {
                order.push(node);
            }
        }

        let mut pending: HashMap<*const Node<T>, Vec<T>> = HashMap::new();
        pending.insert(self.key(), vec![T::one()]);
        for node in order.iter().rev() {
            let Some(g) = pending.remove(&node.key()) else {
                continue;
            };
            match &node.0.grad_fn {
                None => node.accumulate_grad(&g),
                Some(grad_fn) => {
                    let grads = (grad_fn.backward)(&g);
                    debug_assert_eq!(grads.len(), grad_fn.parents.len(), "{}", node.0.op);
                    for (parent, pg) in grad_fn.parents.iter().zip(grads) {
                        let Some(pg) = pg else { continue };
                        if !parent.requires_grad() {
                            continue;
                        }
                        debug_assert_eq!(pg.len(), parent.numel(), "grad of {}", node.0.op);
                        match pending.get_mut(&parent.key()) {
                            Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, &b)| *a += b),
                            None => {
                                pending.insert(parent.key(), pg);
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }

    // ---- elementwise and reductions; thin wrappers over `ops` ----

    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        ops::add(self, other)
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        ops::sub(self, other)
    }

    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        ops::mul(self, other)
    }

    pub fn scale(&self, factor: T) -> Tensor<T> {
        ops::scale(self, factor)
    }

    pub fn relu(&self) -> Tensor<T> {
        ops::relu(self)
    }

    pub fn abs(&self) -> Tensor<T> {
        ops::abs(self)
    }

    pub fn square(&self) -> Tensor<T> {
        ops::square(self)
    }

    pub fn sum(&self) -> Tensor<T> {
        ops::sum(self)
    }

    pub fn mean(&self) -> Tensor<T> {
        ops::mean(self)
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<T>> {
        ops::reshape(self, shape)
    }
}

