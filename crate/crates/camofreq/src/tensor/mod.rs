//! Dense float64 tensors with reverse-mode automatic differentiation.
//!
//! Tensors are immutable value handles: every operation returns a new tensor
//! and records its provenance so that [`backward`] can replay the chain rule.
//! Feature maps use H×W×C row-major layout (channel fastest); convolution
//! kernels are k×k×C_in×C_out.
//!
//! Cloning a tensor is O(1) — handles share the underlying buffer. Data is
//! never mutated after construction, which makes tensors safe to share across
//! threads for data-parallel work. Gradients live in a side buffer that is
//! only written by [`backward`] and read through [`Tensor::grad`].

mod autograd;
mod ops;
mod params;

pub use autograd::backward;
pub use ops::{
    activation, concat, haar_inverse, resample, ActivationKind, Band, ResampleDirection,
    ResampleMode,
};
pub use params::{ParamStore, PARAM_MAGIC};

use crate::error::{Error, Result};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

pub(crate) use autograd::Op;

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

pub(crate) struct Inner {
    pub(crate) id: u64,
    pub(crate) shape: Vec<usize>,
    pub(crate) data: Vec<f64>,
    /// Leaf marker: gradients are retained here after a backward pass.
    pub(crate) requires_grad: bool,
    /// True when this node or any ancestor requires gradients; used to prune
    /// backward traversal of constant subgraphs.
    pub(crate) needs_grad: bool,
    pub(crate) grad: Mutex<Option<Vec<f64>>>,
    /// Recording of the operation that produced this tensor (None for leaves).
    pub(crate) op: Option<Op>,
}

/// Shared handle to an immutable tensor value.
#[derive(Clone)]
pub struct Tensor {
    pub(crate) inner: Arc<Inner>,
}

impl Tensor {
    fn validate_shape(shape: &[usize], len: usize) -> Result<()> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::Dimension(format!(
                "shape dimensions must be positive, got {shape:?}"
            )));
        }
        let numel: usize = shape.iter().product();
        if numel != len {
            return Err(Error::Dimension(format!(
                "shape {shape:?} implies {numel} elements but buffer holds {len}"
            )));
        }
        Ok(())
    }

    /// Leaf tensor from raw data. Fails if the shape does not match the buffer.
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        Self::validate_shape(shape, data.len())?;
        Ok(Self::leaf(shape.to_vec(), data, false))
    }

    /// Leaf tensor that will retain its gradient after a backward pass.
    pub fn new_param(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        Self::validate_shape(shape, data.len())?;
        Ok(Self::leaf(shape.to_vec(), data, true))
    }

    pub fn zeros(shape: &[usize]) -> Result<Tensor> {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Result<Tensor> {
        let numel: usize = shape.iter().product();
        Self::new(shape, vec![value; numel])
    }

    /// Scalar tensor (shape `[1]`).
    pub fn scalar(value: f64) -> Tensor {
        Self::leaf(vec![1], vec![value], false)
    }

    /// Build a rank-3 tensor by evaluating `f(row, col, channel)`.
    pub fn from_fn(h: usize, w: usize, c: usize, f: impl Fn(usize, usize, usize) -> f64) -> Tensor {
        let mut data = Vec::with_capacity(h * w * c);
        for i in 0..h {
            for j in 0..w {
                for k in 0..c {
                    data.push(f(i, j, k));
                }
            }
        }
        Self::leaf(vec![h, w, c], data, false)
    }

    pub(crate) fn leaf(shape: Vec<usize>, data: Vec<f64>, requires_grad: bool) -> Tensor {
        Tensor {
            inner: Arc::new(Inner {
                id: fresh_id(),
                shape,
                data,
                requires_grad,
                needs_grad: requires_grad,
                grad: Mutex::new(None),
                op: None,
            }),
        }
    }

    pub(crate) fn from_op(shape: Vec<usize>, data: Vec<f64>, op: Op) -> Tensor {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        let needs_grad = op.inputs().iter().any(|t| t.inner.needs_grad);
        Tensor {
            inner: Arc::new(Inner {
                id: fresh_id(),
                shape,
                data,
                requires_grad: false,
                needs_grad,
                grad: Mutex::new(None),
                op: Some(op),
            }),
        }
    }

    pub(crate) fn id(&self) -> u64 {
        self.inner.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.inner.data
    }

    pub fn rank(&self) -> usize {
        self.inner.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.inner.data.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    /// Dimensions of a rank-3 feature map as (height, width, channels).
    pub fn hwc(&self) -> Result<(usize, usize, usize)> {
        match self.inner.shape[..] {
            [h, w, c] => Ok((h, w, c)),
            _ => Err(Error::Dimension(format!(
                "expected rank-3 feature map, got shape {:?}",
                self.inner.shape
            ))),
        }
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.numel() != 1 {
            return Err(Error::Contract(format!(
                "item() requires a scalar, got shape {:?}",
                self.inner.shape
            )));
        }
        Ok(self.inner.data[0])
    }

    /// Element accessor for rank-3 tensors; row-major H×W×C indexing.
    pub fn at(&self, i: usize, j: usize, k: usize) -> f64 {
        let (_, w, c) = (self.inner.shape[0], self.inner.shape[1], self.inner.shape[2]);
        self.inner.data[(i * w + j) * c + k]
    }

    /// Copy of the gradient buffer populated by the most recent backward pass.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.inner.grad.lock().unwrap().clone()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.lock().unwrap() = None;
    }

    /// Leaf copy of this tensor's values, detached from the recorded graph.
    pub fn detach(&self) -> Tensor {
        Self::leaf(self.inner.shape.clone(), self.inner.data.clone(), false)
    }

    pub(crate) fn accumulate_grad(&self, contribution: &[f64]) {
        let mut slot = self.inner.grad.lock().unwrap();
        match slot.as_mut() {
            Some(buf) => {
                for (g, c) in buf.iter_mut().zip(contribution) {
                    *g += c;
                }
            }
            None => *slot = Some(contribution.to_vec()),
        }
    }
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.inner.shape)
            .field("requires_grad", &self.inner.requires_grad)
            .field(
                "data",
                &if self.numel() <= 8 {
                    format!("{:?}", self.inner.data)
                } else {
                    format!("[{} elements]", self.numel())
                },
            )
            .finish()
    }
}
