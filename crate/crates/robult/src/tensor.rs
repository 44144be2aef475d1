//! Dense f64 tensors with per-tensor gradient buffers.
//!
//! A [`Tensor`] is a cheap handle (`Rc<RefCell<..>>`) so the same storage can
//! appear as a graph leaf in many operations and persist across training
//! steps. Gradients are accumulated (summed) by [`crate::graph::Graph::backward`]
//! and only into tensors whose `requires_grad` flag is set at backward time;
//! the flag is intentionally not baked into the recorded graph.

use std::cell::{Ref, RefCell};
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Result, RobultError};

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

struct TensorData {
    shape: Vec<usize>,
    values: Vec<f64>,
    grad: Vec<f64>,
    requires_grad: bool,
}

/// Shared handle to a dense tensor. `values.len() == grad.len() == numel`.
#[derive(Clone)]
pub struct Tensor {
    id: u64,
    inner: Rc<RefCell<TensorData>>,
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let d = self.inner.borrow();
        f.debug_struct("Tensor")
            .field("id", &self.id)
            .field("shape", &d.shape)
            .field("requires_grad", &d.requires_grad)
            .finish()
    }
}

impl Tensor {
    fn new(shape: Vec<usize>, values: Vec<f64>, requires_grad: bool) -> Tensor {
        let n = values.len();
        Tensor {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            inner: Rc::new(RefCell::new(TensorData {
                shape,
                values,
                grad: vec![0.0; n],
                requires_grad,
            })),
        }
    }

    /// Leaf tensor from explicit values. Fails if the value count does not
    /// match the shape product.
    pub fn from_vec(shape: &[usize], values: Vec<f64>) -> Result<Tensor> {
        let numel: usize = shape.iter().product();
        if numel != values.len() {
            return Err(RobultError::Dimension {
                op: "from_vec",
                lhs: shape.to_vec(),
                rhs: vec![values.len()],
            });
        }
        Ok(Tensor::new(shape.to_vec(), values, false))
    }

    /// Zero-filled leaf.
    pub fn zeros(shape: &[usize]) -> Tensor {
        let numel: usize = shape.iter().product();
        Tensor::new(shape.to_vec(), vec![0.0; numel], false)
    }

    /// 1x1 leaf holding a single value.
    pub fn scalar(v: f64) -> Tensor {
        Tensor::new(vec![1, 1], vec![v], false)
    }

    /// Internal constructor for op outputs (always grad-enabled).
    pub(crate) fn op_output(shape: Vec<usize>, values: Vec<f64>) -> Tensor {
        Tensor::new(shape, values, true)
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn shape(&self) -> Vec<usize> {
        self.inner.borrow().shape.clone()
    }

    pub fn numel(&self) -> usize {
        self.inner.borrow().values.len()
    }

    /// Row count for 2-D tensors.
    pub fn rows(&self) -> usize {
        let d = self.inner.borrow();
        debug_assert_eq!(d.shape.len(), 2, "rows() on non-2-D tensor");
        d.shape[0]
    }

    /// Column count for 2-D tensors.
    pub fn cols(&self) -> usize {
        let d = self.inner.borrow();
        debug_assert_eq!(d.shape.len(), 2, "cols() on non-2-D tensor");
        d.shape[1]
    }

    pub fn is_2d(&self) -> bool {
        self.inner.borrow().shape.len() == 2
    }

    /// Borrow of the value buffer (row-major).
    pub fn values(&self) -> Ref<'_, [f64]> {
        Ref::map(self.inner.borrow(), |d| d.values.as_slice())
    }

    /// Borrow of the gradient buffer.
    pub fn grad(&self) -> Ref<'_, [f64]> {
        Ref::map(self.inner.borrow(), |d| d.grad.as_slice())
    }

    pub fn values_vec(&self) -> Vec<f64> {
        self.inner.borrow().values.clone()
    }

    pub fn grad_vec(&self) -> Vec<f64> {
        self.inner.borrow().grad.clone()
    }

    /// The single value of a 1x1 tensor.
    pub fn scalar_value(&self) -> f64 {
        let d = self.inner.borrow();
        debug_assert_eq!(d.values.len(), 1, "scalar_value() on non-scalar");
        d.values[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.borrow().requires_grad
    }

    pub fn set_requires_grad(&self, flag: bool) {
        self.inner.borrow_mut().requires_grad = flag;
    }

    /// Overwrite values in place (shape must match). Used by the optimizer.
    pub fn set_values(&self, values: &[f64]) -> Result<()> {
        let mut d = self.inner.borrow_mut();
        if d.values.len() != values.len() {
            return Err(RobultError::Dimension {
                op: "set_values",
                lhs: d.shape.clone(),
                rhs: vec![values.len()],
            });
        }
        d.values.copy_from_slice(values);
        Ok(())
    }

    pub fn zero_grad(&self) {
        for g in self.inner.borrow_mut().grad.iter_mut() {
            *g = 0.0;
        }
    }

    /// Accumulate `delta` into the gradient buffer, regardless of the flag.
    /// Callers gate on `requires_grad`; see `Graph::backward`.
    pub(crate) fn add_to_grad(&self, delta: &[f64]) {
        let mut d = self.inner.borrow_mut();
        debug_assert_eq!(d.grad.len(), delta.len());
        for (g, dv) in d.grad.iter_mut().zip(delta) {
            *g += dv;
        }
    }

    /// True if the two handles share storage.
    pub fn same_storage(&self, other: &Tensor) -> bool {
        Rc::ptr_eq(&self.inner, &other.inner)
    }
}

/// Flip the gradient flag on a set of tensors at once.
pub fn set_requires_grad(tensors: &[Tensor], flag: bool) {
    for t in tensors {
        t.set_requires_grad(flag);
    }
}
