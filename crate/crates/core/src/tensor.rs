//! Dense row-major f64 tensors and the gradient store backward fills.
//!
//! A `Tensor` is an immutable shape + buffer pair with a unique id. Ops never
//! mutate an existing tensor; they allocate fresh outputs, which keeps a
//! recorded tape valid no matter how values are reused. Gradients live in a
//! [`GradStore`] keyed by tensor id rather than inside the tensor itself, so
//! tensors stay cheaply cloneable and safe to move across threads.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::error::{Error, Result};

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

/// Unique identity of a tensor value. Fresh per allocation; never reused.
pub type TensorId = u64;

/// How a tensor participates in differentiation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum GradKind {
    /// Not on any differentiable path.
    None,
    /// A leaf the caller asked gradients for (parameters, probed inputs).
    Leaf,
    /// Produced by a recorded op from at least one tracked input.
    Tracked,
}

/// Dense N-dimensional array of f64 in row-major order.
#[derive(Debug, Clone)]
pub struct Tensor {
    id: TensorId,
    shape: Vec<usize>,
    data: Arc<Vec<f64>>,
    grad_kind: GradKind,
}

impl Tensor {
    /// Builds a tensor from a buffer; `data.len()` must equal `product(shape)`.
    pub fn new(data: Vec<f64>, shape: &[usize]) -> Tensor {
        let numel: usize = shape.iter().product();
        assert_eq!(
            data.len(),
            numel,
            "tensor data length {} does not match shape {:?}",
            data.len(),
            shape
        );
        Tensor {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape: shape.to_vec(),
            data: Arc::new(data),
            grad_kind: GradKind::None,
        }
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor::new(vec![0.0; shape.iter().product()], shape)
    }

    pub fn ones(shape: &[usize]) -> Tensor {
        Tensor::new(vec![1.0; shape.iter().product()], shape)
    }

    pub fn full(shape: &[usize], value: f64) -> Tensor {
        Tensor::new(vec![value; shape.iter().product()], shape)
    }

    pub fn scalar(value: f64) -> Tensor {
        Tensor::new(vec![value], &[])
    }

    /// Marks this tensor as a differentiation leaf (or clears the mark).
    pub fn requires_grad(mut self, yes: bool) -> Tensor {
        self.grad_kind = if yes { GradKind::Leaf } else { GradKind::None };
        self
    }

    /// True for leaves the caller wants gradients for.
    pub fn is_leaf(&self) -> bool {
        self.grad_kind == GradKind::Leaf
    }

    /// True if gradients flow through this tensor (leaf or derived from one).
    pub fn tracks_grad(&self) -> bool {
        self.grad_kind != GradKind::None
    }

    pub(crate) fn mark_tracked(&mut self) {
        self.grad_kind = GradKind::Tracked;
    }

    pub fn id(&self) -> TensorId {
        self.id
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

    /// Shared handle to the raw buffer, for backward closures that must
    /// outlive the borrow of the input tensor.
    pub(crate) fn data_arc(&self) -> Arc<Vec<f64>> {
        Arc::clone(&self.data)
    }

    /// A scalar tensor's single value.
    pub fn item(&self) -> f64 {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    /// Same buffer under a new shape with the same element count.
    /// The result is a fresh tensor identity; gradient tracking is handled
    /// by the reshape op, not here.
    pub fn reshaped(&self, shape: &[usize]) -> Tensor {
        let numel: usize = shape.iter().product();
        assert_eq!(self.numel(), numel, "reshape {:?} -> {:?}", self.shape, shape);
        Tensor {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape: shape.to_vec(),
            data: Arc::clone(&self.data),
            grad_kind: GradKind::None,
        }
    }

    /// Errors if any stored scalar is NaN or infinite, naming the first
    /// offending flat index.
    pub fn check_finite(&self, context: &str) -> Result<()> {
        for (i, v) in self.data.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::invalid(format!(
                    "{context}: non-finite value {v} at flat index {i} (shape {:?})",
                    self.shape
                )));
            }
        }
        Ok(())
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Gradients produced by a backward pass, keyed by tensor id.
#[derive(Debug, Default)]
pub struct GradStore {
    grads: std::collections::HashMap<TensorId, Vec<f64>>,
}

impl GradStore {
    pub fn new() -> GradStore {
        GradStore::default()
    }

    /// Adds `grad` into the accumulator for `id`.
    pub(crate) fn accumulate(&mut self, id: TensorId, grad: &[f64]) {
        match self.grads.get_mut(&id) {
            Some(acc) => {
                debug_assert_eq!(acc.len(), grad.len());
                for (a, g) in acc.iter_mut().zip(grad) {
                    *a += g;
                }
            }
            None => {
                self.grads.insert(id, grad.to_vec());
            }
        }
    }

    pub(crate) fn insert(&mut self, id: TensorId, grad: Vec<f64>) {
        self.grads.insert(id, grad);
    }

    /// Removes and returns the accumulated gradient for an op output.
    /// Outputs are produced exactly once, so once its node runs the gradient
    /// is no longer needed.
    pub(crate) fn take(&mut self, id: TensorId) -> Option<Vec<f64>> {
        self.grads.remove(&id)
    }

    pub fn get(&self, tensor: &Tensor) -> Option<&[f64]> {
        self.grads.get(&tensor.id()).map(|v| v.as_slice())
    }

    /// Gradient of a tensor as a tensor of the same shape (zeros if none flowed).
    pub fn grad_of(&self, tensor: &Tensor) -> Tensor {
        match self.get(tensor) {
            Some(g) => Tensor::new(g.to_vec(), tensor.shape()),
            None => Tensor::zeros(tensor.shape()),
        }
    }

    pub fn contains(&self, tensor: &Tensor) -> bool {
        self.grads.contains_key(&tensor.id())
    }
}

/// A named trainable tensor together with its Adam moment buffers.
#[derive(Debug, Clone)]
pub struct Parameter {
    name: String,
    pub tensor: Tensor,
    pub adam_m: Vec<f64>,
    pub adam_v: Vec<f64>,
    pub step_count: u64,
}

impl Parameter {
    /// Names are restricted to `[a-z0-9_.]+` so they survive as file-format
    /// keys and CLI output unquoted.
    pub fn new(name: impl Into<String>, tensor: Tensor) -> Parameter {
        let name = name.into();
        assert!(
            !name.is_empty()
                && name
                    .bytes()
                    .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_' || b == b'.'),
            "parameter name {name:?} must match [a-z0-9_.]+"
        );
        let numel = tensor.numel();
        Parameter {
            name,
            tensor: tensor.requires_grad(true),
            adam_m: vec![0.0; numel],
            adam_v: vec![0.0; numel],
            step_count: 0,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Replaces the stored tensor value, preserving leaf status and moments.
    pub fn set_value(&mut self, data: Vec<f64>) {
        assert_eq!(data.len(), self.tensor.numel());
        self.tensor = Tensor::new(data, &self.tensor.shape().to_vec()).requires_grad(true);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fresh_ids_and_shapes() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[2, 3]);
        assert_ne!(a.id(), b.id());
        assert_eq!(a.numel(), 6);
        assert_eq!(a.shape(), &[2, 3]);
    }

    #[test]
    #[should_panic(expected = "does not match shape")]
    fn length_shape_mismatch_panics() {
        Tensor::new(vec![1.0, 2.0], &[3]);
    }

    #[test]
    fn check_finite_names_index() {
        let t = Tensor::new(vec![1.0, f64::NAN, 3.0], &[3]);
        let err = t.check_finite("probe").unwrap_err();
        assert!(err.to_string().contains("flat index 1"));
        assert!(Tensor::ones(&[4]).check_finite("probe").is_ok());
    }

    #[test]
    fn grad_store_accumulates() {
        let t = Tensor::zeros(&[2]).requires_grad(true);
        let mut store = GradStore::new();
        store.accumulate(t.id(), &[1.0, 2.0]);
        store.accumulate(t.id(), &[0.5, 0.5]);
        assert_eq!(store.get(&t).unwrap(), &[1.5, 2.5]);
    }

    #[test]
    #[should_panic(expected = "must match")]
    fn parameter_name_rules() {
        Parameter::new("Bad-Name", Tensor::zeros(&[1]));
    }
}
