//! Dense tensors with tape-style reverse-mode automatic differentiation.
//!
//! Every op that consumes a tensor with `requires_grad` records a node holding
//! its parents and a one-shot backward closure. [`Tensor::backward`] walks the
//! recorded graph in reverse topological order and frees each closure after it
//! runs, so a graph can be differentiated exactly once.
//!
//! Convolutions use the cross-correlation convention throughout.

mod conv;
mod gemm;
mod ops;

pub use conv::{conv2d_output_size, conv_transpose2d_output_size};
pub use gemm::Elem;
pub(crate) use gemm::matmul;

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use crate::error::{Error, Result};

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

type BackwardFn<T> = Box<dyn FnOnce(&[T]) -> Vec<Option<Vec<T>>> + Send>;

struct Node<T: Elem> {
    parents: Vec<Tensor<T>>,
    backward: Option<BackwardFn<T>>,
}

struct Inner<T: Elem> {
    id: u64,
    shape: Vec<usize>,
    data: Arc<Vec<T>>,
    requires_grad: bool,
    grad: Mutex<Option<Vec<T>>>,
    node: Mutex<Option<Node<T>>>,
    consumed: AtomicBool,
}

/// Dense row-major n-dimensional array, cheap to clone (shared storage).
pub struct Tensor<T: Elem = f32> {
    inner: Arc<Inner<T>>,
}

impl<T: Elem> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor {
            inner: Arc::clone(&self.inner),
        }
    }
}

impl<T: Elem> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.inner.shape)
            .field("requires_grad", &self.inner.requires_grad)
            .finish()
    }
}

/// Value equality: same shape and element-wise equal data.
impl<T: Elem> PartialEq for Tensor<T> {
    fn eq(&self, other: &Self) -> bool {
        self.shape() == other.shape() && self.data() == other.data()
    }
}

impl<T: Elem> Tensor<T> {
    fn build(shape: Vec<usize>, data: Arc<Vec<T>>, requires_grad: bool) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor {
            inner: Arc::new(Inner {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                data,
                requires_grad,
                grad: Mutex::new(None),
                node: Mutex::new(None),
                consumed: AtomicBool::new(false),
            }),
        }
    }

    /// Builds a constant tensor. Fails if `data.len()` disagrees with `shape`.
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        Self::from_shared(shape, Arc::new(data))
    }

    pub fn from_shared(shape: &[usize], data: Arc<Vec<T>>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::dim(format!(
                "shape {:?} holds {} elements but data has {}",
                shape,
                n,
                data.len()
            )));
        }
        Ok(Self::build(shape.to_vec(), data, false))
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self::build(shape.to_vec(), Arc::new(vec![T::zero(); n]), false)
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let n = shape.iter().product();
        Self::build(shape.to_vec(), Arc::new(vec![value; n]), false)
    }

    pub fn scalar(value: T) -> Self {
        Self::build(vec![], Arc::new(vec![value]), false)
    }

    /// Leaf tensor that accumulates a gradient during backward.
    pub fn param(shape: &[usize], data: Vec<T>) -> Result<Self> {
        Ok(Self::new(shape, data)?.requires_grad())
    }

    /// Returns a leaf sharing this tensor's storage with gradient tracking enabled.
    pub fn requires_grad(self) -> Self {
        Self::build(self.inner.shape.clone(), Arc::clone(&self.inner.data), true)
    }

    /// Returns a constant sharing this tensor's storage, cut from the graph.
    pub fn detach(&self) -> Self {
        Self::build(self.inner.shape.clone(), Arc::clone(&self.inner.data), false)
    }

    pub fn id(&self) -> u64 {
        self.inner.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn rank(&self) -> usize {
        self.inner.shape.len()
    }

    pub fn len(&self) -> usize {
        self.inner.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inner.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.inner.data
    }

    pub fn shared_data(&self) -> Arc<Vec<T>> {
        Arc::clone(&self.inner.data)
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.inner.data.to_vec()
    }

    pub fn is_tracked(&self) -> bool {
        self.inner.requires_grad
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> T {
        self.inner.data[0]
    }

    /// Gradient accumulated by the last backward pass, if any.
    pub fn grad(&self) -> Option<Vec<T>> {
        self.inner.grad.lock().unwrap().clone()
    }

    pub fn take_grad(&self) -> Option<Vec<T>> {
        self.inner.grad.lock().unwrap().take()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.lock().unwrap() = None;
    }

    /// Converts precision, producing an untracked tensor.
    pub fn cast<U: Elem>(&self) -> Tensor<U> {
        let data = self
            .data()
            .iter()
            .map(|v| U::from(*v).expect("finite cast"))
            .collect();
        Tensor::build(self.inner.shape.clone(), Arc::new(data), false)
    }

    /// Records `backward` as the way to push an output gradient to `parents`.
    /// The result is untracked if no parent requires a gradient.
    pub(crate) fn from_op(
        shape: Vec<usize>,
        data: Vec<T>,
        parents: Vec<Tensor<T>>,
        backward: impl FnOnce(&[T]) -> Vec<Option<Vec<T>>> + Send + 'static,
    ) -> Self {
        let tracked = parents.iter().any(|p| p.inner.requires_grad);
        let out = Self::build(shape, Arc::new(data), tracked);
        if tracked {
            *out.inner.node.lock().unwrap() = Some(Node {
                parents,
                backward: Some(Box::new(backward)),
            });
        }
        out
    }

    /// Runs reverse-mode differentiation from this scalar.
    ///
    /// Every tracked tensor reachable from here receives a gradient (added to
    /// any gradient it already holds). Backward closures are released as they
    /// run; calling this twice on the same result is a usage error.
    pub fn backward(&self) -> Result<()> {
        if self.len() != 1 {
            return Err(Error::usage(format!(
                "backward requires a scalar, got shape {:?}",
                self.shape()
            )));
        }
        if !self.inner.requires_grad {
            return Err(Error::usage("backward on a tensor that does not require grad"));
        }
        if self.inner.consumed.swap(true, Ordering::SeqCst) {
            return Err(Error::usage(
                "backward already ran on this graph; re-run the forward pass first",
            ));
        }

        let order = self.topo_order();
        let mut pending: HashMap<u64, Vec<T>> = HashMap::new();
        pending.insert(self.id(), vec![T::one()]);

        for t in order.iter().rev() {
            let Some(g) = pending.remove(&t.id()) else {
                continue;
            };
            let node = t.inner.node.lock().unwrap().take();
            if let Some(mut node) = node {
                if let Some(f) = node.backward.take() {
                    let parent_grads = f(&g);
                    debug_assert_eq!(parent_grads.len(), node.parents.len());
                    for (p, pg) in node.parents.iter().zip(parent_grads) {
                        if !p.inner.requires_grad {
                            continue;
                        }
                        let Some(pg) = pg else { continue };
                        debug_assert_eq!(pg.len(), p.len());
                        match pending.get_mut(&p.id()) {
                            Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, b)| *a = *a + *b),
                            None => {
                                pending.insert(p.id(), pg);
                            }
                        }
                    }
                }
            }
            let mut slot = t.inner.grad.lock().unwrap();
            match slot.as_mut() {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a = *a + *b),
                None => *slot = Some(g),
            }
        }
        Ok(())
    }

    /// Post-order over the recorded graph (parents before children).
    fn topo_order(&self) -> Vec<Tensor<T>> {
        let mut order = Vec::new();
        let mut visited = HashSet::new();
        let mut stack: Vec<(Tensor<T>, bool)> = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !visited.insert(t.id()) {
                continue;
            }
            stack.push((t.clone(), true));
            let node = t.inner.node.lock().unwrap();
            if let Some(node) = node.as_ref() {
                for p in node.parents.iter().rev() {
                    if p.inner.requires_grad && !visited.contains(&p.id()) {
                        stack.push((p.clone(), false));
                    }
                }
            }
        }
        order
    }
}

pub(crate) fn check_finite<T: Elem>(data: &[T], what: &str) -> Result<()> {
    if data.iter().any(|v| v.is_nan()) {
        return Err(Error::Numeric(format!("NaN in {what}")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_gradient() {
        let x = Tensor::<f64>::param(&[1], vec![3.0]).unwrap();
        let y = x.mul(&x).unwrap().sum();
        y.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![6.0]);
    }

    #[test]
    fn backward_on_non_scalar_is_usage_error() {
        let x = Tensor::<f32>::param(&[2], vec![1.0, 2.0]).unwrap();
        let y = x.scale(2.0);
        assert!(matches!(y.backward(), Err(Error::Usage(_))));
    }

    #[test]
    fn second_backward_is_usage_error() {
        let x = Tensor::<f32>::param(&[2], vec![1.0, 2.0]).unwrap();
        let y = x.mul(&x).unwrap().sum();
        y.backward().unwrap();
        assert!(matches!(y.backward(), Err(Error::Usage(_))));
        // a fresh forward works again
        let y = x.mul(&x).unwrap().sum();
        y.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![4.0, 8.0]);
    }

    #[test]
    fn shared_subexpression_accumulates() {
        let x = Tensor::<f64>::param(&[1], vec![2.0]).unwrap();
        let a = x.scale(3.0);
        let y = a.add(&a).unwrap().sum();
        y.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![6.0]);
        assert_eq!(a.grad().unwrap(), vec![2.0]);
    }

    #[test]
    fn constants_get_no_graph() {
        let a = Tensor::<f32>::new(&[2], vec![1.0, 2.0]).unwrap();
        let b = a.relu();
        assert!(!b.is_tracked());
        assert!(b.sum().backward().is_err());
    }

    #[test]
    fn shape_data_mismatch_rejected() {
        assert!(matches!(
            Tensor::<f32>::new(&[2, 2], vec![0.0; 3]),
            Err(Error::Dimension(_))
        ));
    }
}
