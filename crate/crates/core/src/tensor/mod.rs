//! Dense `f64` tensors with tape-free reverse-mode differentiation.
//!
//! Every tensor produced by an operation on inputs that require gradients
//! keeps a reference to those inputs together with a local gradient rule.
//! Calling [`Tensor::backward`] on a scalar walks that graph in reverse
//! topological order and accumulates gradients into the leaf tensors that
//! were created with [`Tensor::requires_grad`].
//!
//! Tensors are immutable once built. Parameter updates create fresh leaves,
//! so a graph that is still alive always sees the values it was built from.

mod conv;
mod ops;

use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, Mutex};

use crate::error::{Error, Result};

pub use ops::BinaryKind;

pub(crate) fn matmul_square(a: &[f64], b: &[f64], n: usize) -> Vec<f64> {
    ops::matmul_raw(a, b, n, n, n)
}

/// Local gradient rule: `(grad_out, inputs, output_data) -> grad per input`.
pub(crate) type BackwardFn =
    Box<dyn Fn(&[f64], &[Tensor], &[f64]) -> Vec<Option<Vec<f64>>> + Send + Sync>;

struct GradFn {
    op: &'static str,
    inputs: Vec<Tensor>,
    backward: BackwardFn,
}

struct Inner {
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad: Mutex<Option<Vec<f64>>>,
    grad_fn: Option<GradFn>,
}

#[derive(Clone)]
pub struct Tensor(Arc<Inner>);

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = f.debug_struct("Tensor");
        s.field("shape", &self.0.shape);
        if self.numel() <= 16 {
            s.field("data", &self.0.data);
        }
        if let Some(g) = &self.0.grad_fn {
            s.field("op", &g.op);
        }
        s.field("requires_grad", &self.0.requires_grad).finish()
    }
}

pub(crate) fn numel_of(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    pub fn new(data: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
        if shape.contains(&0) {
            return Err(Error::InvalidShape(format!(
                "extents must be positive, got {shape:?}"
            )));
        }
        if numel_of(shape) != data.len() {
            return Err(Error::InvalidShape(format!(
                "shape {shape:?} needs {} elements, got {}",
                numel_of(shape),
                data.len()
            )));
        }
        Ok(Tensor::leaf(data, shape.to_vec(), false))
    }

    /// Builds a tensor whose shape is known to match; panics otherwise.
    pub fn from_shape_vec(shape: &[usize], data: Vec<f64>) -> Tensor {
        Tensor::new(data, shape).expect("shape/data mismatch")
    }

    pub fn vector(data: &[f64]) -> Tensor {
        Tensor::leaf(data.to_vec(), vec![data.len()], false)
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor::leaf(vec![v], Vec::new(), false)
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Tensor {
        Tensor::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], v: f64) -> Tensor {
        Tensor::leaf(vec![v; numel_of(shape)], shape.to_vec(), false)
    }

    pub fn eye(n: usize) -> Tensor {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Tensor::leaf(data, vec![n, n], false)
    }

    fn leaf(data: Vec<f64>, shape: Vec<usize>, requires_grad: bool) -> Tensor {
        Tensor(Arc::new(Inner {
            shape,
            data,
            requires_grad,
            grad: Mutex::new(None),
            grad_fn: None,
        }))
    }

    /// A fresh leaf holding the same values that will accumulate gradients.
    pub fn requires_grad(&self) -> Tensor {
        Tensor::leaf(self.0.data.clone(), self.0.shape.clone(), true)
    }

    /// A fresh leaf with the same values and no gradient tracking.
    pub fn detach(&self) -> Tensor {
        if !self.0.requires_grad && self.0.grad_fn.is_none() {
            return self.clone();
        }
        Tensor::leaf(self.0.data.clone(), self.0.shape.clone(), false)
    }

    pub(crate) fn from_op(
        data: Vec<f64>,
        shape: Vec<usize>,
        op: &'static str,
        inputs: Vec<Tensor>,
        backward: BackwardFn,
    ) -> Tensor {
        debug_assert_eq!(numel_of(&shape), data.len(), "{op}");
        let tracked = inputs.iter().any(|t| t.0.requires_grad);
        let grad_fn = tracked.then(|| GradFn {
            op,
            inputs,
            backward,
        });
        Tensor(Arc::new(Inner {
            shape,
            data,
            requires_grad: tracked,
            grad: Mutex::new(None),
            grad_fn,
        }))
    }

    /// Result of an operation that never carries gradients.
    pub(crate) fn untracked(data: Vec<f64>, shape: Vec<usize>) -> Tensor {
        Tensor::leaf(data, shape, false)
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn rank(&self) -> usize {
        self.0.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.0.data
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.data.clone()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape());
        self.0.data[0]
    }

    pub fn is_tracked(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.grad_fn.is_none()
    }

    pub fn op_name(&self) -> Option<&'static str> {
        self.0.grad_fn.as_ref().map(|g| g.op)
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self) -> Option<Tensor> {
        let g = self.0.grad.lock().expect("grad lock poisoned");
        g.as_ref()
            .map(|v| Tensor::leaf(v.clone(), self.0.shape.clone(), false))
    }

    pub fn zero_grad(&self) {
        *self.0.grad.lock().expect("grad lock poisoned") = None;
    }

    pub fn all_finite(&self) -> bool {
        self.0.data.iter().all(|v| v.is_finite())
    }

    /// Identity of the underlying buffer, stable for the tensor's lifetime.
    fn key(&self) -> *const Inner {
        Arc::as_ptr(&self.0)
    }

    /// Accumulates `d self / d leaf` into every reachable leaf that requires
    /// gradients. `self` must hold exactly one element.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::NonScalarLoss(self.shape().to_vec()));
        }
        if !self.0.requires_grad {
            return Ok(());
        }
        let order = self.topo_order();
        let mut grads: HashMap<*const Inner, Vec<f64>> = HashMap::new();
        grads.insert(self.key(), vec![1.0]);
        for node in order.iter().rev() {
            let Some(g) = grads.remove(&node.key()) else {
                continue;
            };
            match &node.0.grad_fn {
                Some(gf) => {
                    let input_grads = (gf.backward)(&g, &gf.inputs, &node.0.data);
                    debug_assert_eq!(input_grads.len(), gf.inputs.len(), "{}", gf.op);
                    for (input, ig) in gf.inputs.iter().zip(input_grads) {
                        let Some(ig) = ig else { continue };
                        if !input.0.requires_grad {
                            continue;
                        }
                        debug_assert_eq!(ig.len(), input.numel(), "{}", gf.op);
                        match grads.get_mut(&input.key()) {
                            Some(acc) => acc.iter_mut().zip(&ig).for_each(|(a, b)| *a += b),
                            None => {
                                grads.insert(input.key(), ig);
                            }
                        }
                    }
                }
                None => {
                    let mut slot = node.0.grad.lock().expect("grad lock poisoned");
                    match slot.as_mut() {
                        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                        None => *slot = Some(g),
                    }
                }
            }
        }
        Ok(())
    }

    /// Nodes reachable from `self` that take part in differentiation, ordered
    /// so that every node appears after all of its inputs.
    fn topo_order(&self) -> Vec<Tensor> {
        let mut order = Vec::new();
        let mut seen = std::collections::HashSet::new();
        // (node, inputs already pushed)
        let mut stack = vec![(self.clone(), false)];
        while let Some((node, expanded)) = stack.pop() {
            if expanded {
                order.push(node);
                continue;
            }
            if !seen.insert(node.key()) {
                continue;
            }
            stack.push((node.clone(), true));
            if let Some(gf) = &node.0.grad_fn {
                for input in gf.inputs.iter().rev() {
                    if input.0.requires_grad && !seen.contains(&input.key()) {
                        stack.push((input.clone(), false));
                    }
                }
            }
        }
        order
    }
}
