//! Dense n-dimensional arrays with reverse-mode automatic differentiation.
//!
//! Training runs in `f32`. Gradient verification against finite differences
//! runs the same graph code in `f64` ("check mode"), where central
//! differences are numerically trustworthy.

mod conv;
mod graph;
mod ops;

pub use graph::{Grads, Graph, Var};

use std::fmt;

use num_traits::Float;

use crate::error::{Error, Result};

/// Scalar element type for tensors. Implemented for `f32` (training) and
/// `f64` (gradient-check mode).
pub trait Real:
    Float + fmt::Debug + fmt::Display + Send + Sync + 'static
{
    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Real for f32 {
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }
    fn to_f64(self) -> f64 {
        self
    }
}

/// Dense row-major tensor. `grad` and `node_id` are populated only while the
/// tensor participates in a recorded graph.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T: Real = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
    pub requires_grad: bool,
    pub grad: Option<Vec<T>>,
    pub node_id: Option<usize>,
}

impl<T: Real> Tensor<T> {
    /// Builds a tensor, checking that `data` matches the shape's element count.
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if data.len() != numel {
            return Err(Error::dim(
                "tensor",
                format!("shape {:?} needs {} elements, got {}", shape, numel, data.len()),
            ));
        }
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::dim("tensor", format!("zero-sized dim in {:?}", shape)));
        }
        Ok(Tensor {
            shape,
            data,
            requires_grad: false,
            grad: None,
            node_id: None,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![T::zero(); numel],
            requires_grad: false,
            grad: None,
            node_id: None,
        }
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; numel],
            requires_grad: false,
            grad: None,
            node_id: None,
        }
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::one())
    }

    pub fn scalar(value: T) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
            requires_grad: false,
            grad: None,
            node_id: None,
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let numel: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: (0..numel).map(|i| f(i)).collect(),
            requires_grad: false,
            grad: None,
            node_id: None,
        }
    }

    pub fn requires_grad(mut self, flag: bool) -> Self {
        self.requires_grad = flag;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Element-wise cast; `f32 -> f64` is exact.
    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| U::from_f64(Real::to_f64(v))).collect(),
            requires_grad: self.requires_grad,
            grad: None,
            node_id: None,
        }
    }
}

/// Convenience for numeric literals inside generic code.
#[inline]
pub(crate) fn lit<T: Real>(x: f64) -> T {
    T::from_f64(x)
}
