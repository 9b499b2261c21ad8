//! Dense 64-bit tensors with reverse-mode automatic differentiation.
//!
//! [`Tensor`] is the plain value type used for parameters, inputs and
//! checkpoints. [`tape::Tape`] records operations for a single forward pass
//! and replays them in reverse for gradients. A tape is single-threaded;
//! independent passes use independent tapes.

use thiserror::Error;

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod init;
pub mod tape;

pub use adam::{AdamConfig, AdamState};
pub use tape::{BnStats, SparseMatrix, SparseRef, TRef, Tape};

/// Errors from tensor construction and tape operations.
#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("{0}")]
    Validation(String),
    #[error("index out of range: {0}")]
    Range(String),
}

fn shape_err(op: &'static str, detail: String) -> TensorError {
    TensorError::ShapeMismatch { op, detail }
}

/// Tensor shape as a dimension list. Scalars use the one-element shape `[1]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Shape(pub Vec<usize>);

impl Shape {
    pub fn scalar() -> Self {
        Shape(vec![1])
    }

    pub fn vector(n: usize) -> Self {
        Shape(vec![n])
    }

    pub fn matrix(rows: usize, cols: usize) -> Self {
        Shape(vec![rows, cols])
    }

    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }

    pub fn ndim(&self) -> usize {
        self.0.len()
    }

    /// Rows of a 2-D shape.
    pub fn rows(&self) -> usize {
        debug_assert_eq!(self.ndim(), 2);
        self.0[0]
    }

    /// Columns of a 2-D shape.
    pub fn cols(&self) -> usize {
        debug_assert_eq!(self.ndim(), 2);
        self.0[1]
    }

    pub fn is_scalar(&self) -> bool {
        self.numel() == 1
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "[")?;
        for (i, d) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, "x")?;
            }
            write!(f, "{d}")?;
        }
        write!(f, "]")
    }
}

/// Dense 64-bit tensor. `grad` is present exactly when `requires_grad` is
/// set and always matches `data` in shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Shape,
    pub data: Vec<f64>,
    pub requires_grad: bool,
    pub grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Shape, data: Vec<f64>) -> Result<Self, TensorError> {
        if shape.numel() != data.len() {
            return Err(TensorError::Validation(format!(
                "data length {} does not match shape {shape}",
                data.len()
            )));
        }
        Ok(Tensor {
            shape,
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(shape: Shape) -> Self {
        let n = shape.numel();
        Tensor {
            shape,
            data: vec![0.0; n],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn filled(shape: Shape, value: f64) -> Self {
        let n = shape.numel();
        Tensor {
            shape,
            data: vec![value; n],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor::filled(Shape::scalar(), value)
    }

    /// Identity matrix of size `n`.
    pub fn eye(n: usize) -> Self {
        let mut t = Tensor::zeros(Shape::matrix(n, n));
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    /// Marks the tensor as a trainable parameter with a zeroed gradient
    /// accumulator.
    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self.grad = Some(vec![0.0; self.data.len()]);
        self
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Adds `delta` into the gradient accumulator.
    pub fn accumulate_grad(&mut self, delta: &[f64]) {
        debug_assert!(self.requires_grad);
        debug_assert_eq!(delta.len(), self.data.len());
        let g = self
            .grad
            .get_or_insert_with(|| vec![0.0; self.data.len()]);
        for (gi, di) in g.iter_mut().zip(delta) {
            *gi += di;
        }
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = &mut self.grad {
            g.iter_mut().for_each(|x| *x = 0.0);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_rejects_length_mismatch() {
        let err = Tensor::new(Shape::matrix(2, 2), vec![1.0; 3]).unwrap_err();
        assert!(matches!(err, TensorError::Validation(_)));
    }

    #[test]
    fn with_grad_allocates_matching_accumulator() {
        let t = Tensor::zeros(Shape::matrix(2, 3)).with_grad();
        assert!(t.requires_grad);
        assert_eq!(t.grad.as_ref().unwrap().len(), 6);
    }

    #[test]
    fn grad_accumulates_across_calls() {
        let mut t = Tensor::zeros(Shape::vector(2)).with_grad();
        t.accumulate_grad(&[1.0, 2.0]);
        t.accumulate_grad(&[0.5, 0.5]);
        assert_eq!(t.grad.as_ref().unwrap(), &vec![1.5, 2.5]);
        t.zero_grad();
        assert_eq!(t.grad.as_ref().unwrap(), &vec![0.0, 0.0]);
    }
}
