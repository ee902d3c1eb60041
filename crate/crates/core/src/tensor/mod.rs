//! Dense real tensors with reverse-mode automatic differentiation and
//! an SGD optimizer.
//!
//! Values are plain shape + row-major data; differentiation happens on a
//! [`Tape`] that records every operation and replays it backwards once.
//! Single precision is the training default; every op is also available
//! in double precision for finite-difference verification.

pub mod checkpoint;
mod scalar;
mod sgd;
mod tape;

pub use scalar::Scalar;
pub use sgd::SgdState;
pub use tape::{softmax_rows, Tape, Var};

use crate::error::{Error, Result};

/// A dense value: shape plus row-major data.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let expect: usize = shape.iter().product();
        if data.len() != expect {
            return Err(Error::domain(format!(
                "tensor data length {} does not match shape {:?} (= {expect})",
                data.len(),
                shape
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape,
            data: vec![T::zero(); len],
        }
    }

    pub fn scalar(value: T) -> Self {
        Tensor {
            shape: vec![],
            data: vec![value],
        }
    }

    pub fn from_f64(shape: Vec<usize>, values: &[f64]) -> Result<Self> {
        Tensor::new(shape, values.iter().map(|&v| T::from_f64(v)).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// The single element of a scalar tensor.
    pub fn item(&self) -> Result<T> {
        if self.data.len() != 1 {
            return Err(Error::domain(format!(
                "item() on tensor of shape {:?}",
                self.shape
            )));
        }
        Ok(self.data[0])
    }
}
