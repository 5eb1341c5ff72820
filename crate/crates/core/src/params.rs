//! Named store of trainable tensors with deterministic creation order.
//!
//! Layers hold [`ParamId`] handles; a forward pass binds every entry into the
//! graph once via [`bind_all`](ParamStore::bind_all) and reads gradients back
//! by the same indices after `backward`.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Graph, Real, Tensor, Var};

/// Index of a parameter inside its [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }

    pub fn from_index(i: usize) -> Self {
        ParamId(i)
    }
}

pub struct ParamStore<T: Real = f32> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    index: HashMap<String, usize>,
}

impl<T: Real> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            names: Vec::new(),
            tensors: Vec::new(),
            index: HashMap::new(),
        }
    }

    /// Registers a tensor under a unique name.
    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Contract(format!("duplicate parameter name `{name}`")));
        }
        let id = self.tensors.len();
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.tensors.push(tensor.requires_grad(true));
        Ok(ParamId(id))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    /// (name, tensor) pairs in creation order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(self.tensors.iter())
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    /// Total number of scalar parameters.
    pub fn total_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Binds every parameter as a graph leaf, in creation order.
    pub fn bind_all(&self, graph: &mut Graph<T>) -> BoundParams {
        let vars = self
            .tensors
            .iter()
            .enumerate()
            .map(|(i, t)| graph.leaf_param(i, t.clone()))
            .collect();
        BoundParams { vars }
    }

    /// Binds every parameter as a constant (no gradients recorded); used for
    /// inference-only passes.
    pub fn bind_all_frozen(&self, graph: &mut Graph<T>) -> BoundParams {
        let vars = self
            .tensors
            .iter()
            .map(|t| graph.constant(t.clone()))
            .collect();
        BoundParams { vars }
    }

    /// Element-wise cast of the whole store (used to run the trained `f32`
    /// weights through the `f64` check-mode graph).
    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
            index: self.index.clone(),
        }
    }
}

/// Graph leaves for one forward pass, indexed by [`ParamId`].
pub struct BoundParams {
    vars: Vec<Var>,
}

impl BoundParams {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }
}

/// Truncated-normal init (sigma 0.02, resampling beyond two sigma) for linear,
/// attention and embedding weights.
pub fn trunc_normal<T: Real>(shape: &[usize], std: f64, rng: &mut ChaCha8Rng) -> Tensor<T> {
    Tensor::from_fn(shape, |_| {
        loop {
            // Box-Muller; only the first variate is used to keep the stream simple.
            let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
            let u2: f64 = rng.gen_range(0.0..1.0);
            let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
            if z.abs() <= 2.0 {
                return T::from_f64(z * std);
            }
        }
    })
}

/// Fan-in scaled uniform init for convolution weights: U(-1/sqrt(fan_in), 1/sqrt(fan_in))
/// with fan_in = in_channels_per_group * kh * kw.
pub fn conv_fan_in<T: Real>(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<T> {
    assert_eq!(shape.len(), 4, "conv weight must be rank 4");
    let fan_in: usize = shape[1] * shape[2] * shape[3];
    let bound = 1.0 / (fan_in as f64).sqrt();
    Tensor::from_fn(shape, |_| T::from_f64(rng.gen_range(-bound..bound)))
}
