//! Minimal f64 tensors and reverse-mode automatic differentiation.
//!
//! [`Tensor`] is plain storage (shape + data + optional gradient buffer);
//! all computation happens on a [`Tape`], which records operations and
//! replays them backwards. There is no broadcasting anywhere: elementwise
//! ops require identical shapes, which keeps gradient code honest.

mod adam;
pub mod gradcheck;
pub mod linalg;
mod tape;

pub use adam::{AdamParams, AdamState};
pub use tape::{Tape, Var};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TensorError {
    #[error("{op}: shape mismatch {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: expected rank {expected}, got shape {shape:?}")]
    BadRank {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },
    #[error("{op}: {msg}")]
    Invalid { op: &'static str, msg: String },
    #[error("shape {shape:?} holds {expected} elements, got {got}")]
    DataLength {
        shape: Vec<usize>,
        expected: usize,
        got: usize,
    },
    #[error("shape must be non-empty with positive dimensions, got {0:?}")]
    BadShape(Vec<usize>),
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("variable #{0} does not belong to this tape")]
    BadVar(usize),
    #[error("optimizer state tracks {state} parameters, caller passed {got}")]
    OptimizerArity { state: usize, got: usize },
    #[error("optimizer state for parameter {index} holds {state} elements, parameter has {got}")]
    OptimizerShape {
        index: usize,
        state: usize,
        got: usize,
    },
}

fn validate_shape(shape: &[usize]) -> Result<usize, TensorError> {
    if shape.is_empty() || shape.iter().any(|&d| d == 0) {
        return Err(TensorError::BadShape(shape.to_vec()));
    }
    Ok(shape.iter().product())
}

/// Owned n-dimensional array of f64 with an optional gradient buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    /// Zero-filled tensor without a gradient buffer.
    pub fn zeros(shape: &[usize]) -> Result<Self, TensorError> {
        let n = validate_shape(shape)?;
        Ok(Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
            grad: None,
        })
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self, TensorError> {
        let n = validate_shape(shape)?;
        if data.len() != n {
            return Err(TensorError::DataLength {
                shape: shape.to_vec(),
                expected: n,
                got: data.len(),
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
            grad: None,
        })
    }

    /// Attaches a zeroed gradient buffer (idempotent).
    pub fn with_grad(mut self) -> Self {
        if self.grad.is_none() {
            self.grad = Some(vec![0.0; self.data.len()]);
        }
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn grad_mut(&mut self) -> Option<&mut [f64]> {
        self.grad.as_deref_mut()
    }

    /// Adds `scale * g` into the gradient buffer, creating it if absent.
    pub fn add_to_grad(&mut self, g: &[f64], scale: f64) -> Result<(), TensorError> {
        if g.len() != self.data.len() {
            return Err(TensorError::DataLength {
                shape: self.shape.clone(),
                expected: self.data.len(),
                got: g.len(),
            });
        }
        let dst = self.grad.get_or_insert_with(|| vec![0.0; g.len()]);
        for (d, &s) in dst.iter_mut().zip(g) {
            *d += scale * s;
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = &mut self.grad {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
    }
}
