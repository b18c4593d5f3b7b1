//! Dense row-major tensors with reverse-mode gradients.
//!
//! The op set is exactly what the encoder-decoder model and its losses
//! need; there is no broadcasting beyond bias rows and no general autodiff.
//! Ops record a backward closure onto freshly created output tensors when
//! any input requires gradients; `backward()` walks the recorded graph in
//! reverse topological order and accumulates into each tensor's `grad`
//! buffer.

mod ops;

pub use ops::{bce_loss, cross_entropy_mean, BCE_CLAMP, LAYER_NORM_EPS};

use std::cell::RefCell;
use std::collections::HashSet;
use std::rc::Rc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Backward closure: `(output_grad, output_data, parents)`.
///
/// Reads parent data through immutable borrows, releases them, then
/// accumulates contributions one parent at a time.
type BackwardFn<S> = Box<dyn Fn(&[S], &[S], &[Tensor<S>])>;

struct Node<S: Scalar> {
    parents: Vec<Tensor<S>>,
    backward: BackwardFn<S>,
}

struct Inner<S: Scalar> {
    shape: Vec<usize>,
    data: Vec<S>,
    grad: Option<Vec<S>>,
    requires_grad: bool,
    node: Option<Node<S>>,
}

/// Shared handle to one tensor. Cloning is cheap and aliases storage.
pub struct Tensor<S: Scalar> {
    inner: Rc<RefCell<Inner<S>>>,
}

impl<S: Scalar> Clone for Tensor<S> {
    fn clone(&self) -> Self {
        Tensor {
            inner: Rc::clone(&self.inner),
        }
    }
}

impl<S: Scalar> std::fmt::Debug for Tensor<S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let inner = self.inner.borrow();
        f.debug_struct("Tensor")
            .field("shape", &inner.shape)
            .field("requires_grad", &inner.requires_grad)
            .field("data", &inner.data)
            .finish()
    }
}

fn check_shape(shape: &[usize], len: usize) -> Result<()> {
    if shape.is_empty() || shape.iter().any(|&d| d == 0) {
        return Err(Error::Parameter {
            name: "shape",
            message: format!("dimensions must be positive, got {shape:?}"),
        });
    }
    let numel: usize = shape.iter().product();
    if numel != len {
        return Err(Error::Parameter {
            name: "shape",
            message: format!("shape {shape:?} does not match {len} elements"),
        });
    }
    Ok(())
}

impl<S: Scalar> Tensor<S> {
    fn from_parts(shape: Vec<usize>, data: Vec<S>, requires_grad: bool, node: Option<Node<S>>) -> Self {
        Tensor {
            inner: Rc::new(RefCell::new(Inner {
                shape,
                data,
                grad: None,
                requires_grad,
                node,
            })),
        }
    }

    /// Plain (non-trainable) tensor from row-major data.
    pub fn from_vec(shape: &[usize], data: Vec<S>) -> Result<Self> {
        check_shape(shape, data.len())?;
        Ok(Self::from_parts(shape.to_vec(), data, false, None))
    }

    /// Trainable leaf (`requires_grad = true`).
    pub fn param(shape: &[usize], data: Vec<S>) -> Result<Self> {
        let t = Self::from_vec(shape, data)?;
        t.inner.borrow_mut().requires_grad = true;
        Ok(t)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Self::from_vec(shape, vec![S::zero(); numel]).expect("valid shape")
    }

    pub fn full(shape: &[usize], value: S) -> Self {
        let numel = shape.iter().product();
        Self::from_vec(shape, vec![value; numel]).expect("valid shape")
    }

    pub fn scalar(value: S) -> Self {
        Self::from_vec(&[1], vec![value]).expect("valid shape")
    }

    /// Gaussian-initialized leaf with the given standard deviation.
    pub fn randn<R: Rng + ?Sized>(shape: &[usize], std: S, rng: &mut R) -> Self {
        let numel = shape.iter().product();
        let data = (0..numel).map(|_| S::standard_normal(rng) * std).collect();
        Self::from_vec(shape, data).expect("valid shape")
    }

    fn new_op(shape: Vec<usize>, data: Vec<S>, parents: Vec<Tensor<S>>, backward: BackwardFn<S>) -> Self {
        let track = parents.iter().any(|p| p.requires_grad());
        if track {
            Self::from_parts(shape, data, true, Some(Node { parents, backward }))
        } else {
            Self::from_parts(shape, data, false, None)
        }
    }

    pub fn shape(&self) -> Vec<usize> {
        self.inner.borrow().shape.clone()
    }

    pub fn numel(&self) -> usize {
        self.inner.borrow().data.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.borrow().requires_grad
    }

    pub fn set_requires_grad(&self, value: bool) {
        self.inner.borrow_mut().requires_grad = value;
    }

    /// True when both handles alias the same storage.
    pub fn same_storage(&self, other: &Tensor<S>) -> bool {
        Rc::ptr_eq(&self.inner, &other.inner)
    }

    pub fn to_vec(&self) -> Vec<S> {
        self.inner.borrow().data.clone()
    }

    /// Runs `f` over the raw data without copying.
    pub fn with_data<R>(&self, f: impl FnOnce(&[S]) -> R) -> R {
        f(&self.inner.borrow().data)
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> S {
        let inner = self.inner.borrow();
        assert_eq!(inner.data.len(), 1, "item() requires exactly one element");
        inner.data[0]
    }

    pub fn grad_vec(&self) -> Option<Vec<S>> {
        self.inner.borrow().grad.clone()
    }

    pub fn zero_grad(&self) {
        self.inner.borrow_mut().grad = None;
    }

    /// In-place data mutation preserving shape; used by the optimizer.
    pub fn map_data_in_place(&self, f: impl FnOnce(&mut [S])) {
        f(&mut self.inner.borrow_mut().data);
    }

    /// Overwrites data with equal-length contents.
    pub fn set_data(&self, data: &[S]) {
        let mut inner = self.inner.borrow_mut();
        assert_eq!(inner.data.len(), data.len(), "set_data length mismatch");
        inner.data.copy_from_slice(data);
    }

    /// Detached copy: same shape and data, no graph, no grad.
    pub fn detached_clone(&self) -> Tensor<S> {
        let inner = self.inner.borrow();
        Self::from_parts(inner.shape.clone(), inner.data.clone(), false, None)
    }

    pub(crate) fn dims2(&self, op: &'static str) -> Result<(usize, usize)> {
        let inner = self.inner.borrow();
        if inner.shape.len() == 2 {
            Ok((inner.shape[0], inner.shape[1]))
        } else {
            Err(Error::ShapeMismatch {
                op,
                lhs: inner.shape.clone(),
                rhs: vec![],
            })
        }
    }

    fn accumulate_grad(&self, contribution: &[S]) {
        let mut inner = self.inner.borrow_mut();
        if !inner.requires_grad {
            return;
        }
        let n = inner.data.len();
        debug_assert_eq!(n, contribution.len());
        let grad = inner.grad.get_or_insert_with(|| vec![S::zero(); n]);
        for (g, c) in grad.iter_mut().zip(contribution) {
            *g += *c;
        }
    }

    /// Reverse topological order (parents before consumers).
    fn topo_order(&self) -> Vec<Tensor<S>> {
        let mut order = Vec::new();
        let mut entered: HashSet<usize> = HashSet::new();
        let mut stack: Vec<(Tensor<S>, usize)> = vec![(self.clone(), 0)];
        while let Some((t, i)) = stack.pop() {
            let key = Rc::as_ptr(&t.inner) as usize;
            if i == 0 {
                if entered.contains(&key) {
                    continue;
                }
                entered.insert(key);
            }
            let parent = {
                let inner = t.inner.borrow();
                inner
                    .node
                    .as_ref()
                    .and_then(|node| node.parents.get(i).cloned())
            };
            match parent {
                Some(p) => {
                    stack.push((t, i + 1));
                    stack.push((p, 0));
                }
                None => order.push(t),
            }
        }
        order
    }

    /// Backpropagates with seed gradient 1 on every element of `self`.
    pub fn backward(&self) {
        self.backward_seeded(S::one());
    }

    /// Backpropagates with the given seed in every element of `self`'s grad.
    ///
    /// Leaf gradients accumulate across calls (clear with
    /// [`Tensor::zero_grad`]); interior node gradients are transient and
    /// reset on every walk. After the walk, every reachable tensor with
    /// `requires_grad` has a populated (possibly zero) grad buffer.
    pub fn backward_seeded(&self, seed: S) {
        let order = self.topo_order();
        for t in &order {
            let mut inner = t.inner.borrow_mut();
            if inner.node.is_some() {
                inner.grad = None;
            }
        }
        {
            let seed_vec = vec![seed; self.numel()];
            self.accumulate_grad(&seed_vec);
        }
        for t in order.iter().rev() {
            let inner = t.inner.borrow();
            let Some(node) = inner.node.as_ref() else {
                continue;
            };
            let Some(grad) = inner.grad.as_ref() else {
                continue;
            };
            (node.backward)(grad, &inner.data, &node.parents);
        }
        for t in &order {
            let mut inner = t.inner.borrow_mut();
            if inner.requires_grad && inner.grad.is_none() {
                let n = inner.data.len();
                inner.grad = Some(vec![S::zero(); n]);
            }
        }
    }
}

/// Dense matrix product `out[m×n] = a[m×k] · b[k×n]` on raw slices.
pub(crate) fn matmul_raw<S: Scalar>(a: &[S], b: &[S], m: usize, k: usize, n: usize, out: &mut [S]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for row in 0..m {
        let out_row = &mut out[row * n..(row + 1) * n];
        for kk in 0..k {
            let av = a[row * k + kk];
            if av == S::zero() {
                continue;
            }
            let b_row = &b[kk * n..(kk + 1) * n];
            for (o, bv) in out_row.iter_mut().zip(b_row) {
                *o += av * *bv;
            }
        }
    }
}
