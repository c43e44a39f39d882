//! Dense tensors with reverse-mode automatic differentiation.
//!
//! A [`Tensor`] is a shaped buffer of reals plus an optional gradient slot.
//! Operations record their inputs and a pullback closure; [`Tensor::backward`]
//! walks the recorded graph once in reverse topological order and accumulates
//! gradients additively into every `requires_grad` leaf. Calling `backward`
//! twice without [`Tensor::zero_grad`] therefore doubles leaf gradients.
//!
//! Gradient recording can be suspended with [`no_grad`] for evaluation paths.

mod error;
pub mod conv;
pub mod norm;
pub mod ops;
pub mod resample;

pub use error::{Result, TensorError};

use crate::precision::Real;
use std::cell::{Cell, RefCell};
use std::collections::HashMap;
use std::rc::Rc;

thread_local! {
    static NEXT_ID: Cell<u64> = const { Cell::new(0) };
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

fn fresh_id() -> u64 {
    NEXT_ID.with(|c| {
        let id = c.get();
        c.set(id + 1);
        id
    })
}

/// Run `f` with gradient recording disabled (evaluation / inference paths).
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    GRAD_ENABLED.with(|flag| {
        let prev = flag.get();
        flag.set(false);
        let out = f();
        flag.set(prev);
        out
    })
}

pub fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|flag| flag.get())
}

/// Pullback: given the cotangent of the output, the needs mask, and the
/// parent tensors, produce cotangents for each parent (`None` where the mask
/// is false). Pullbacks read forward values through the parents slice rather
/// than capturing tensor handles, so closures never hold graph edges.
type Pullback<T> = Box<dyn Fn(&[T], &[bool], &[Tensor<T>]) -> Vec<Option<Vec<T>>>>;

struct GradFn<T: Real> {
    parents: Vec<Tensor<T>>,
    pullback: Pullback<T>,
}

impl<T: Real> Drop for Inner<T> {
    fn drop(&mut self) {
        // Tear deep graphs down iteratively; a naive recursive drop of a long
        // op chain overflows the stack.
        let mut queue: Vec<Tensor<T>> = Vec::new();
        if let Some(gf) = self.grad_fn.take() {
            queue.extend(gf.parents);
        }
        while let Some(mut t) = queue.pop() {
            if let Some(inner) = Rc::get_mut(&mut t.inner) {
                if let Some(gf) = inner.grad_fn.take() {
                    queue.extend(gf.parents);
                }
            }
        }
    }
}

struct Inner<T: Real> {
    id: u64,
    shape: Vec<usize>,
    data: RefCell<Vec<T>>,
    grad: RefCell<Option<Vec<T>>>,
    requires_grad: bool,
    grad_fn: Option<GradFn<T>>,
}

/// Shared handle to a dense n-dimensional value.
///
/// Cloning is cheap (reference count); the buffer is immutable after creation
/// except through the explicit parameter-update path used by optimizers.
#[derive(Clone)]
pub struct Tensor<T: Real> {
    inner: Rc<Inner<T>>,
}

impl<T: Real> std::fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.inner.shape)
            .field("requires_grad", &self.inner.requires_grad)
            .finish()
    }
}

impl<T: Real> Tensor<T> {
    fn build(shape: Vec<usize>, data: Vec<T>, requires_grad: bool, grad_fn: Option<GradFn<T>>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor {
            inner: Rc::new(Inner {
                id: fresh_id(),
                shape,
                data: RefCell::new(data),
                grad: RefCell::new(None),
                requires_grad,
                grad_fn,
            }),
        }
    }

    /// Constant (non-trainable) tensor.
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(TensorError::shape(
                "from_vec",
                format!("shape {:?} implies {} elements, got {}", shape, shape.iter().product::<usize>(), data.len()),
            ));
        }
        Ok(Self::build(shape.to_vec(), data, false, None))
    }

    /// Trainable leaf; receives accumulated gradients on backward passes.
    pub fn parameter(shape: &[usize], data: Vec<T>) -> Result<Self> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(TensorError::shape(
                "parameter",
                format!("shape {:?} implies {} elements, got {}", shape, shape.iter().product::<usize>(), data.len()),
            ));
        }
        Ok(Self::build(shape.to_vec(), data, true, None))
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self::build(shape.to_vec(), vec![T::ZERO; n], false, None)
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let n = shape.iter().product();
        Self::build(shape.to_vec(), vec![value; n], false, None)
    }

    pub fn scalar(value: T) -> Self {
        Self::build(vec![1], vec![value], false, None)
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn numel(&self) -> usize {
        self.inner.shape.iter().product()
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.inner.grad_fn.is_none()
    }

    pub fn id(&self) -> u64 {
        self.inner.id
    }

    /// Snapshot of the buffer.
    pub fn to_vec(&self) -> Vec<T> {
        self.inner.data.borrow().clone()
    }

    /// Read access without copying.
    pub fn with_data<R>(&self, f: impl FnOnce(&[T]) -> R) -> R {
        f(&self.inner.data.borrow())
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> T {
        debug_assert_eq!(self.numel(), 1);
        self.inner.data.borrow()[0]
    }

    pub fn grad(&self) -> Option<Vec<T>> {
        self.inner.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    /// In-place parameter update (optimizer path). Must not be called while a
    /// graph referencing this tensor is still to be traversed.
    pub fn update_data(&self, f: impl FnOnce(&mut [T])) {
        f(&mut self.inner.data.borrow_mut());
    }

    pub fn all_finite(&self) -> bool {
        self.inner.data.borrow().iter().all(|v| v.is_finite())
    }

    /// Detached copy sharing no graph history.
    pub fn detach(&self) -> Tensor<T> {
        Self::build(self.inner.shape.clone(), self.to_vec(), false, None)
    }

    /// Record a new op result. `pullback` maps the output cotangent to parent
    /// cotangents. Recording is skipped when gradients are disabled or no
    /// parent requires them.
    pub(crate) fn from_op(
        shape: Vec<usize>,
        data: Vec<T>,
        parents: Vec<Tensor<T>>,
        pullback: impl Fn(&[T], &[bool], &[Tensor<T>]) -> Vec<Option<Vec<T>>> + 'static,
    ) -> Self {
        let track = grad_enabled() && parents.iter().any(|p| p.requires_grad());
        if track {
            Self::build(
                shape,
                data,
                true,
                Some(GradFn {
                    parents,
                    pullback: Box::new(pullback),
                }),
            )
        } else {
            Self::build(shape, data, false, None)
        }
    }

    /// Reverse-mode differentiation from a scalar loss. Gradients accumulate
    /// additively into `requires_grad` leaves.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(TensorError::NonScalarLoss { numel: self.numel() });
        }
        let graph = Graph::trace(self);
        graph.backward(self, vec![T::ONE]);
        Ok(())
    }
}

/// Topologically ordered record of the ops that produced a tensor.
///
/// Reverse traversal visits each node exactly once; cotangents for interior
/// nodes live only for the duration of the walk.
pub struct Graph<T: Real> {
    /// Parents precede children.
    order: Vec<Tensor<T>>,
}

impl<T: Real> Graph<T> {
    pub fn trace(root: &Tensor<T>) -> Self {
        let mut order: Vec<Tensor<T>> = Vec::new();
        let mut state: HashMap<u64, u8> = HashMap::new(); // 1 = entered, 2 = done
        let mut stack: Vec<(Tensor<T>, usize)> = vec![(root.clone(), 0)];
        while let Some((node, child_idx)) = stack.pop() {
            let id = node.inner.id;
            match state.get(&id) {
                Some(2) => continue,
                Some(1) if child_idx == 0 => continue,
                _ => {}
            }
            state.insert(id, 1);
            let parents: &[Tensor<T>] = node
                .inner
                .grad_fn
                .as_ref()
                .map(|f| f.parents.as_slice())
                .unwrap_or(&[]);
            if child_idx < parents.len() {
                let next = parents[child_idx].clone();
                stack.push((node, child_idx + 1));
                if state.get(&next.inner.id) != Some(&2) {
                    stack.push((next, 0));
                }
            } else {
                state.insert(id, 2);
                order.push(node);
            }
        }
        Graph { order }
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    fn backward(&self, root: &Tensor<T>, seed: Vec<T>) {
        let mut cotangents: HashMap<u64, Vec<T>> = HashMap::new();
        cotangents.insert(root.inner.id, seed);
        for node in self.order.iter().rev() {
            let Some(cot) = cotangents.remove(&node.inner.id) else {
                continue;
            };
            if let Some(grad_fn) = &node.inner.grad_fn {
                let needs: Vec<bool> = grad_fn.parents.iter().map(|p| p.requires_grad()).collect();
                let parent_cots = (grad_fn.pullback)(&cot, &needs, &grad_fn.parents);
                debug_assert_eq!(parent_cots.len(), grad_fn.parents.len());
                for (parent, pc) in grad_fn.parents.iter().zip(parent_cots) {
                    let Some(pc) = pc else { continue };
                    debug_assert_eq!(pc.len(), parent.numel());
                    match cotangents.get_mut(&parent.inner.id) {
                        Some(acc) => {
                            for (a, v) in acc.iter_mut().zip(&pc) {
                                *a += *v;
                            }
                        }
                        None => {
                            cotangents.insert(parent.inner.id, pc);
                        }
                    }
                }
            } else if node.inner.requires_grad {
                let mut slot = node.inner.grad.borrow_mut();
                match slot.as_mut() {
                    Some(acc) => {
                        for (a, v) in acc.iter_mut().zip(&cot) {
                            *a += *v;
                        }
                    }
                    None => *slot = Some(cot),
                }
            }
        }
    }
}

/// Training vs evaluation behaviour for layers with running statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[cfg(test)]
mod tests {
    use super::ops;
    use super::*;

    #[test]
    fn sum_gradient_is_ones() {
        let x = Tensor::<f64>::parameter(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        let loss = ops::sum_all(&x);
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn elementwise_square_gradient() {
        let x = Tensor::<f64>::parameter(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        let y = ops::mul(&x, &x).unwrap();
        let loss = ops::sum_all(&y);
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0, 4.0, 6.0]);
    }

    #[test]
    fn repeated_backward_accumulates() {
        let x = Tensor::<f64>::parameter(&[2], vec![1.0, 1.0]).unwrap();
        let loss = ops::sum_all(&x);
        loss.backward().unwrap();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0, 2.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let x = Tensor::<f64>::parameter(&[2], vec![1.0, 1.0]).unwrap();
        assert!(matches!(x.backward(), Err(TensorError::NonScalarLoss { numel: 2 })));
    }

    #[test]
    fn no_grad_suppresses_recording() {
        let x = Tensor::<f64>::parameter(&[2], vec![1.0, 2.0]).unwrap();
        let y = no_grad(|| ops::mul(&x, &x).unwrap());
        assert!(!y.requires_grad());
        assert!(y.is_leaf());
    }

    #[test]
    fn fanout_accumulates_through_shared_input() {
        // loss = sum(x*x + x) => grad = 2x + 1
        let x = Tensor::<f64>::parameter(&[2], vec![3.0, -1.0]).unwrap();
        let sq = ops::mul(&x, &x).unwrap();
        let s = ops::add(&sq, &x).unwrap();
        let loss = ops::sum_all(&s);
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![7.0, -1.0]);
    }

    #[test]
    fn graph_visits_each_node_once() {
        let x = Tensor::<f64>::parameter(&[2], vec![1.0, 2.0]).unwrap();
        let y = ops::mul(&x, &x).unwrap();
        let z = ops::add(&y, &y).unwrap(); // diamond: z -> y (twice) -> x
        let loss = ops::sum_all(&z);
        let graph = Graph::trace(&loss);
        let mut seen = std::collections::HashSet::new();
        for node in &graph.order {
            assert!(seen.insert(node.id()), "node visited twice");
        }
        // x, y, z, loss
        assert_eq!(graph.len(), 4);
    }

    #[test]
    fn deep_chain_does_not_overflow_stack() {
        let x = Tensor::<f64>::parameter(&[1], vec![0.5]).unwrap();
        let mut y = x.clone();
        for _ in 0..50_000 {
            y = ops::scale(&y, 1.0 + 1e-9);
        }
        let loss = ops::sum_all(&y);
        loss.backward().unwrap();
        assert!(x.grad().unwrap()[0] > 0.99);
    }
}
