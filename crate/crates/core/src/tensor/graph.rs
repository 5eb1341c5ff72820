//! Dynamically recorded computation graph (tape).
//!
//! Each forward pass records into a fresh [`Graph`]; `backward` walks the
//! tape once in reverse record order, accumulating gradients additively at
//! fan-out. The graph is dropped after the optimizer step.

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Handle to a node in one [`Graph`]. Only valid for the graph that issued it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub(crate) type BackwardFn<T> = Box<dyn Fn(&[Node<T>], &[T], &mut Grads<T>) + Send>;

pub(crate) struct Node<T: Real> {
    pub tensor: Tensor<T>,
    pub op: &'static str,
    pub needs_grad: bool,
    pub backward: Option<BackwardFn<T>>,
    pub param: Option<usize>,
}

/// Per-node gradient slots used during a backward sweep.
pub struct Grads<T: Real> {
    slots: Vec<Option<Vec<T>>>,
}

impl<T: Real> Grads<T> {
    fn new(len: usize) -> Self {
        let mut slots = Vec::with_capacity(len);
        slots.resize_with(len, || None);
        Grads { slots }
    }

    /// Mutable access to a node's gradient accumulator, zero-initialized on
    /// first touch. Backward rules add into the returned slice.
    pub(crate) fn entry(&mut self, var: Var, numel: usize) -> &mut [T] {
        self.slots[var.0].get_or_insert_with(|| vec![T::zero(); numel])
    }

    /// Elementwise `slot[var] += src`.
    pub(crate) fn add(&mut self, var: Var, src: &[T]) {
        let slot = self.entry(var, src.len());
        for (dst, s) in slot.iter_mut().zip(src) {
            *dst = *dst + *s;
        }
    }
}

/// Recorded computation graph over tensors of element type `T`.
pub struct Graph<T: Real> {
    pub(crate) nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a leaf. Gradient flows into it iff `tensor.requires_grad`.
    pub fn leaf(&mut self, tensor: Tensor<T>) -> Var {
        let needs = tensor.requires_grad;
        self.insert(tensor, "leaf", needs, None, None)
    }

    /// Records a non-differentiable constant leaf.
    pub fn constant(&mut self, mut tensor: Tensor<T>) -> Var {
        tensor.requires_grad = false;
        self.insert(tensor, "const", false, None, None)
    }

    /// Records a trainable-parameter leaf tagged with its store index so
    /// gradients can be exported after backward.
    pub fn leaf_param(&mut self, param_index: usize, mut tensor: Tensor<T>) -> Var {
        tensor.requires_grad = true;
        self.insert(tensor, "leaf", true, None, Some(param_index))
    }

    pub(crate) fn insert(
        &mut self,
        mut tensor: Tensor<T>,
        op: &'static str,
        needs_grad: bool,
        backward: Option<BackwardFn<T>>,
        param: Option<usize>,
    ) -> Var {
        let id = self.nodes.len();
        tensor.node_id = Some(id);
        tensor.grad = None;
        self.nodes.push(Node {
            tensor,
            op,
            needs_grad,
            backward: if needs_grad { backward } else { None },
            param,
        });
        Var(id)
    }

    pub(crate) fn needs_grad(&self, var: Var) -> bool {
        self.nodes[var.0].needs_grad
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.nodes[var.0].tensor
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].tensor.shape()
    }

    pub fn data(&self, var: Var) -> &[T] {
        self.nodes[var.0].tensor.data()
    }

    /// Gradient of a leaf after [`Graph::backward`]; `None` for non-leaf or
    /// non-requires-grad nodes.
    pub fn grad(&self, var: Var) -> Option<&[T]> {
        self.nodes[var.0].tensor.grad.as_deref()
    }

    pub fn op_name(&self, var: Var) -> &'static str {
        self.nodes[var.0].op
    }

    /// First node (in record order) holding a non-finite value, if any.
    pub fn first_non_finite(&self) -> Option<(usize, &'static str)> {
        self.nodes
            .iter()
            .enumerate()
            .find(|(_, n)| !n.tensor.is_finite())
            .map(|(i, n)| (i, n.op))
    }

    /// Reverse-mode sweep from a scalar loss. Populates `grad` on every
    /// `requires_grad` leaf reachable from `loss`; unreachable leaves get
    /// zero gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes[loss.0].tensor.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.nodes[loss.0].tensor.shape()
            )));
        }
        let mut grads = Grads::new(self.nodes.len());
        grads.slots[loss.0] = Some(vec![T::one()]);

        let mut leaf_grads: Vec<(usize, Vec<T>)> = Vec::new();
        for i in (0..=loss.0).rev() {
            let Some(g) = grads.slots[i].take() else {
                continue;
            };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            match &node.backward {
                Some(bw) => bw(&self.nodes, &g, &mut grads),
                None => leaf_grads.push((i, g)),
            }
        }
        for (i, g) in leaf_grads {
            self.nodes[i].tensor.grad = Some(g);
        }
        for node in &mut self.nodes {
            if node.tensor.requires_grad && node.backward.is_none() && node.tensor.grad.is_none() {
                let numel = node.tensor.numel();
                node.tensor.grad = Some(vec![T::zero(); numel]);
            }
        }
        Ok(())
    }

    /// Collects gradients of parameter leaves, summed per store index.
    /// `n_params` sizes the result; indices without a bound leaf stay `None`.
    pub fn export_param_grads(&self, n_params: usize) -> Vec<Option<Vec<T>>> {
        let mut out: Vec<Option<Vec<T>>> = Vec::with_capacity(n_params);
        out.resize_with(n_params, || None);
        for node in &self.nodes {
            let (Some(idx), Some(g)) = (node.param, node.tensor.grad.as_ref()) else {
                continue;
            };
            match &mut out[idx] {
                Some(acc) => {
                    for (a, b) in acc.iter_mut().zip(g) {
                        *a = *a + *b;
                    }
                }
                slot => *slot = Some(g.clone()),
            }
        }
        out
    }
}
