use std::cell::{Cell, Ref, RefCell, RefMut};
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::Rng;

use crate::element::{DType, Element};
use crate::error::{invalid, shape_err, Result, TensorError};

static NEXT_ID: AtomicUsize = AtomicUsize::new(1);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Runs `f` without recording operations on the autodiff graph.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    struct Restore(bool);
    impl Drop for Restore {
        fn drop(&mut self) {
            GRAD_ENABLED.with(|g| g.set(self.0));
        }
    }
    let _restore = Restore(GRAD_ENABLED.with(|g| g.replace(false)));
    f()
}

pub fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

/// Local backward rule of a recorded operation: receives the gradient of the
/// output and the operation inputs, returns one optional gradient per input.
pub type BackwardFn<T> = Box<dyn Fn(&[T], &[Tensor<T>]) -> Vec<Option<Vec<T>>>>;

struct GradFn<T: Element> {
    op: &'static str,
    inputs: Vec<Tensor<T>>,
    backward: BackwardFn<T>,
}

struct Node<T: Element> {
    id: usize,
    shape: Vec<usize>,
    data: RefCell<Vec<T>>,
    grad: RefCell<Option<Vec<T>>>,
    requires_grad: bool,
    grad_fn: Option<GradFn<T>>,
}

/// Dense row-major tensor participating in a reverse-mode graph.
///
/// Cloning is cheap and shares storage. A graph is confined to the thread
/// that built it; use [`Tensor::to_vec`] to move values across threads.
pub struct Tensor<T: Element> {
    node: Rc<Node<T>>,
}

impl<T: Element> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor { node: Rc::clone(&self.node) }
    }
}

impl<T: Element> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.node.shape)
            .field("dtype", &T::DTYPE)
            .field("requires_grad", &self.node.requires_grad)
            .field("op", &self.node.grad_fn.as_ref().map(|g| g.op))
            .finish()
    }
}

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Element> Tensor<T> {
    fn make(data: Vec<T>, shape: Vec<usize>, requires_grad: bool, grad_fn: Option<GradFn<T>>) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        Tensor {
            node: Rc::new(Node {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                data: RefCell::new(data),
                grad: RefCell::new(None),
                requires_grad,
                grad_fn,
            }),
        }
    }

    pub fn new(data: Vec<T>, shape: &[usize]) -> Result<Self> {
        if shape.contains(&0) {
            return Err(shape_err("tensor", format!("zero extent in shape {shape:?}")));
        }
        if numel(shape) != data.len() {
            return Err(shape_err(
                "tensor",
                format!("shape {shape:?} holds {} values, got {}", numel(shape), data.len()),
            ));
        }
        Ok(Self::make(data, shape.to_vec(), false, None))
    }

    /// Trainable leaf.
    pub fn param(data: Vec<T>, shape: &[usize]) -> Result<Self> {
        let t = Self::new(data, shape)?;
        Ok(t.into_param())
    }

    /// Converts into a fresh leaf that requires gradients.
    pub fn into_param(self) -> Self {
        let data = self.node.data.borrow().clone();
        Self::make(data, self.node.shape.clone(), true, None)
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        Self::make(vec![value; numel(shape)], shape.to_vec(), false, None)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::one())
    }

    pub fn scalar(value: T) -> Self {
        Self::full(&[1], value)
    }

    pub fn rand_uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut impl Rng) -> Self {
        let data = (0..numel(shape)).map(|_| T::lit(rng.random_range(lo..hi))).collect();
        Self::make(data, shape.to_vec(), false, None)
    }

    /// Records the result of an operation. The node only joins the graph when
    /// recording is enabled and some input requires gradients.
    pub fn from_op(
        op: &'static str,
        data: Vec<T>,
        shape: Vec<usize>,
        inputs: Vec<Tensor<T>>,
        backward: impl Fn(&[T], &[Tensor<T>]) -> Vec<Option<Vec<T>>> + 'static,
    ) -> Self {
        let track = grad_enabled() && inputs.iter().any(|t| t.requires_grad());
        if track {
            Self::make(
                data,
                shape,
                true,
                Some(GradFn { op, inputs, backward: Box::new(backward) }),
            )
        } else {
            Self::make(data, shape, false, None)
        }
    }

    pub fn id(&self) -> usize {
        self.node.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.node.shape
    }

    pub fn ndim(&self) -> usize {
        self.node.shape.len()
    }

    pub fn numel(&self) -> usize {
        numel(&self.node.shape)
    }

    pub fn dtype(&self) -> DType {
        T::DTYPE
    }

    pub fn requires_grad(&self) -> bool {
        self.node.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.node.grad_fn.is_none()
    }

    /// Name of the operation that produced this tensor, if recorded.
    pub fn op_name(&self) -> Option<&'static str> {
        self.node.grad_fn.as_ref().map(|g| g.op)
    }

    pub fn data(&self) -> Ref<'_, Vec<T>> {
        self.node.data.borrow()
    }

    /// In-place access for optimizers and parameter loading.
    pub fn data_mut(&self) -> RefMut<'_, Vec<T>> {
        self.node.data.borrow_mut()
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.node.data.borrow().clone()
    }

    pub fn item(&self) -> T {
        self.node.data.borrow()[0]
    }

    pub fn grad(&self) -> Option<Vec<T>> {
        self.node.grad.borrow().clone()
    }

    pub fn grad_ref(&self) -> Ref<'_, Option<Vec<T>>> {
        self.node.grad.borrow()
    }

    pub fn zero_grad(&self) {
        *self.node.grad.borrow_mut() = Some(vec![T::zero(); self.numel()]);
    }

    pub fn clear_grad(&self) {
        *self.node.grad.borrow_mut() = None;
    }

    /// Copy without graph history.
    pub fn detach(&self) -> Self {
        Self::make(self.to_vec(), self.node.shape.clone(), false, None)
    }

    pub fn cast<U: Element>(&self) -> Tensor<U> {
        let data = self.data().iter().map(|v| U::lit(v.to_f64().unwrap_or(f64::NAN))).collect();
        Tensor::make(data, self.node.shape.clone(), false, None)
    }

    /// `(N, C, H, W)` extents, or an error naming the operation.
    pub fn dims4(&self, op: &'static str) -> Result<(usize, usize, usize, usize)> {
        match self.shape() {
            &[n, c, h, w] => Ok((n, c, h, w)),
            s => Err(shape_err(op, format!("expected 4-D N×C×H×W input, got {s:?}"))),
        }
    }

    fn accumulate_grad(&self, g: &[T]) {
        let mut slot = self.node.grad.borrow_mut();
        match slot.as_mut() {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, &b)| *a += b),
            None => *slot = Some(g.to_vec()),
        }
    }

    /// Backpropagates from a scalar output.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(TensorError::Backward(format!(
                "implicit seed requires a single-element output, got shape {:?}",
                self.shape()
            )));
        }
        self.backward_with(vec![T::one()])
    }

    /// Backpropagates `seed` (same shape as `self`) through the recorded graph.
    /// Gradients accumulate into leaves that require them.
    pub fn backward_with(&self, seed: Vec<T>) -> Result<()> {
        if seed.len() != self.numel() {
            return Err(TensorError::Backward(format!(
                "seed holds {} values, output holds {}",
                seed.len(),
                self.numel()
            )));
        }
        if !self.requires_grad() {
            return Err(TensorError::Backward("output does not require gradients".into()));
        }
        if self.is_leaf() {
            self.accumulate_grad(&seed);
            return Ok(());
        }
        let order = self.topo_order();
        let mut pending: HashMap<usize, Vec<T>> = HashMap::new();
        pending.insert(self.id(), seed);
        for t in order.iter().rev() {
            let Some(g) = pending.remove(&t.id()) else { continue };
            let gf = t.node.grad_fn.as_ref().expect("interior node");
            let grads = no_grad(|| (gf.backward)(&g, &gf.inputs));
            if grads.len() != gf.inputs.len() {
                return Err(TensorError::Backward(format!(
                    "{} returned {} gradients for {} inputs",
                    gf.op,
                    grads.len(),
                    gf.inputs.len()
                )));
            }
            for (input, gi) in gf.inputs.iter().zip(grads) {
                if !input.requires_grad() {
                    continue;
                }
                let Some(gi) = gi else { continue };
                if gi.len() != input.numel() {
                    return Err(TensorError::Backward(format!(
                        "{} produced a gradient of {} values for an input of shape {:?}",
                        gf.op,
                        gi.len(),
                        input.shape()
                    )));
                }
                if input.is_leaf() {
                    input.accumulate_grad(&gi);
                } else {
                    match pending.get_mut(&input.id()) {
                        Some(acc) => acc.iter_mut().zip(&gi).for_each(|(a, &b)| *a += b),
                        None => {
                            pending.insert(input.id(), gi);
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Interior nodes reachable from `self`, inputs before consumers.
    fn topo_order(&self) -> Vec<Tensor<T>> {
        let mut order = Vec::new();
        let mut visited = HashSet::new();
        // (node, children_pushed)
        let mut stack = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !visited.insert(t.id()) {
                continue;
            }
            stack.push((t.clone(), true));
            if let Some(gf) = &t.node.grad_fn {
                for input in &gf.inputs {
                    if input.requires_grad() && !input.is_leaf() && !visited.contains(&input.id()) {
                        stack.push((input.clone(), false));
                    }
                }
            }
        }
        order
    }

    pub fn expect_shape(&self, op: &'static str, shape: &[usize]) -> Result<()> {
        if self.shape() != shape {
            return Err(shape_err(op, format!("expected shape {shape:?}, got {:?}", self.shape())));
        }
        Ok(())
    }

    pub fn ensure_finite(&self, what: &str) -> Result<()> {
        if let Some(pos) = self.data().iter().position(|v| !v.is_finite()) {
            return Err(invalid("finite-check", format!("{what}: non-finite value at index {pos}")));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_inconsistent_shape() {
        let err = Tensor::<f32>::new(vec![1.0; 5], &[2, 3]).unwrap_err();
        assert!(matches!(err, TensorError::Shape { .. }));
    }

    #[test]
    fn leaf_backward_accumulates() {
        let x = Tensor::<f64>::param(vec![2.0], &[1]).unwrap();
        x.backward().unwrap();
        x.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0]);
    }

    #[test]
    fn no_grad_skips_recording() {
        let x = Tensor::<f64>::param(vec![1.0, 2.0], &[2]).unwrap();
        let y = no_grad(|| x.scale(3.0));
        assert!(!y.requires_grad());
        assert!(grad_enabled());
    }
}
