//! Dense f64 tensors with tape-based reverse-mode differentiation.
//!
//! A [`Tensor`] is a shared handle to row-major data plus an optional
//! gradient buffer. Operations live on a [`Tape`]; running an op computes the
//! forward value eagerly and records what backward needs. [`Tape::backward`]
//! replays the records in reverse and accumulates `d(loss)/d(tensor)` into
//! the `grad` field of every tensor created with `requires_grad`.
//!
//! The engine covers exactly what the training stack needs: matmul (plain and
//! transposed-rhs), element-wise arithmetic with trailing row-vector
//! broadcast, row softmax / log-softmax with temperature, segment reductions,
//! layer norm, inverted dropout, gather/scale by rows, column concatenation,
//! and a fused cross-entropy. No general broadcasting, no views, no
//! higher-order derivatives.

mod kernels;
mod tape;

pub mod gradcheck;

pub use kernels::{gemm_nn, gemm_nt, gemm_tn};
pub use kernels::{gemm_nn_seq, gemm_nt_seq, gemm_tn_seq};
#[cfg(feature = "parallel")]
pub use kernels::{gemm_nn_par, gemm_nt_par, gemm_tn_par};
pub use tape::Tape;

use std::cell::{Ref, RefCell};
use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

pub type Result<T> = std::result::Result<T, TensorError>;

#[derive(Debug, thiserror::Error)]
pub enum TensorError {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    DimensionMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("domain error in {op}: {msg}")]
    Domain { op: &'static str, msg: String },
    #[error("invalid parameter in {op}: {msg}")]
    Parameter { op: &'static str, msg: String },
    #[error("segment id {id} out of range [0, {num_segments}) at row {row}")]
    SegmentOutOfRange {
        id: usize,
        num_segments: usize,
        row: usize,
    },
    #[error("contract violation in {op}: {msg}")]
    Contract { op: &'static str, msg: String },
}

static NEXT_TENSOR_ID: AtomicU64 = AtomicU64::new(1);

pub(crate) struct TensorData {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub grad: Option<Vec<f64>>,
    pub requires_grad: bool,
    /// True when this tensor is on some gradient path: either a leaf with
    /// `requires_grad`, or an op output depending on one. Records are only
    /// kept for outputs on the path.
    pub grad_path: bool,
}

/// Shared handle to a dense row-major f64 array with an optional gradient.
///
/// Cloning is cheap and aliases the same storage; the optimizer and the
/// forward pass hold the same parameter handles. A tensor is confined to one
/// logical thread while a tape is live; plain value snapshots
/// ([`Tensor::data_vec`]) move across threads freely.
#[derive(Clone)]
pub struct Tensor {
    id: u64,
    inner: Rc<RefCell<TensorData>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(TensorError::Contract {
                op: "Tensor::new",
                msg: format!("shape {:?} implies {} elements, got {}", shape, numel, data.len()),
            });
        }
        Ok(Self::raw(shape, data, false))
    }

    fn raw(shape: Vec<usize>, data: Vec<f64>, requires_grad: bool) -> Self {
        Tensor {
            id: NEXT_TENSOR_ID.fetch_add(1, Ordering::Relaxed),
            inner: Rc::new(RefCell::new(TensorData {
                shape,
                data,
                grad: None,
                requires_grad,
                grad_path: requires_grad,
            })),
        }
    }

    pub(crate) fn op_output(shape: Vec<usize>, data: Vec<f64>, grad_path: bool) -> Self {
        let t = Self::raw(shape, data, false);
        t.inner.borrow_mut().grad_path = grad_path;
        t
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Self::raw(shape, vec![0.0; numel], false)
    }

    pub fn full(shape: Vec<usize>, value: f64) -> Self {
        let numel = shape.iter().product();
        Self::raw(shape, vec![value; numel], false)
    }

    pub fn scalar(value: f64) -> Self {
        Self::raw(vec![1], vec![value], false)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let m = rows.len();
        let n = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n) {
            return Err(TensorError::Contract {
                op: "Tensor::from_rows",
                msg: "ragged rows".into(),
            });
        }
        let mut data = Vec::with_capacity(m * n);
        for r in rows {
            data.extend_from_slice(r);
        }
        Tensor::new(vec![m, n], data)
    }

    /// Marks or unmarks this tensor as a differentiation leaf.
    pub fn requires_grad(self, flag: bool) -> Self {
        {
            let mut d = self.inner.borrow_mut();
            d.requires_grad = flag;
            d.grad_path = d.grad_path || flag;
        }
        self
    }

    /// Identifier of this node on the computation tape.
    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn shape(&self) -> Vec<usize> {
        self.inner.borrow().shape.clone()
    }

    pub fn numel(&self) -> usize {
        self.inner.borrow().data.len()
    }

    /// Size along dimension `i`.
    pub fn dim(&self, i: usize) -> usize {
        self.inner.borrow().shape[i]
    }

    pub fn data(&self) -> Ref<'_, [f64]> {
        Ref::map(self.inner.borrow(), |d| d.data.as_slice())
    }

    pub fn data_vec(&self) -> Vec<f64> {
        self.inner.borrow().data.clone()
    }

    /// Replaces the stored values; the length must not change.
    pub fn set_data(&self, values: &[f64]) {
        let mut d = self.inner.borrow_mut();
        assert_eq!(d.data.len(), values.len(), "set_data length mismatch");
        d.data.copy_from_slice(values);
    }

    /// In-place access to the values (used by the optimizer and by
    /// finite-difference probes).
    pub fn with_data_mut<R>(&self, f: impl FnOnce(&mut [f64]) -> R) -> R {
        f(&mut self.inner.borrow_mut().data)
    }

    pub fn is_requires_grad(&self) -> bool {
        self.inner.borrow().requires_grad
    }

    pub(crate) fn is_grad_path(&self) -> bool {
        self.inner.borrow().grad_path
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.inner.borrow().grad.clone()
    }

    pub fn zero_grad(&self) {
        self.inner.borrow_mut().grad = None;
    }

    pub(crate) fn accumulate_grad(&self, g: &[f64]) {
        let mut d = self.inner.borrow_mut();
        match &mut d.grad {
            Some(buf) => {
                for (b, v) in buf.iter_mut().zip(g) {
                    *b += v;
                }
            }
            None => d.grad = Some(g.to_vec()),
        }
    }

    /// Value copy that is cut off from the gradient path.
    pub fn detach(&self) -> Tensor {
        let d = self.inner.borrow();
        Self::raw(d.shape.clone(), d.data.clone(), false)
    }

    /// The single value of a scalar tensor.
    pub fn item(&self) -> f64 {
        let d = self.inner.borrow();
        assert_eq!(d.data.len(), 1, "item() on non-scalar tensor");
        d.data[0]
    }

    pub fn all_finite(&self) -> bool {
        self.inner.borrow().data.iter().all(|v| v.is_finite())
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let d = self.inner.borrow();
        f.debug_struct("Tensor")
            .field("id", &self.id)
            .field("shape", &d.shape)
            .field("requires_grad", &d.requires_grad)
            .finish()
    }
}
