//! Define-by-run reverse-mode autodiff tape.
//!
//! Every differentiable op records one node: the output's id plus a closure
//! that maps the output gradient to input-gradient contributions. The tape is
//! rebuilt on every forward pass and consumed by [`Tape::backward`], which
//! replays nodes in reverse execution order exactly once. A tape belongs to
//! one thread; any parallelism lives inside individual ops.

use crate::tensor::{GradStore, Tensor, TensorId};

type BackwardFn = Box<dyn FnOnce(&[f64], &mut GradStore)>;

struct Node {
    output: TensorId,
    backward: BackwardFn,
}

/// Records differentiable ops executed during one forward pass.
pub struct Tape {
    nodes: Vec<Node>,
    recording: bool,
}

impl Tape {
    /// A recording tape for training and gradient checks.
    pub fn new() -> Tape {
        Tape { nodes: Vec::new(), recording: true }
    }

    /// A non-recording tape: ops run forward-only (inference mode).
    pub fn no_grad() -> Tape {
        Tape { nodes: Vec::new(), recording: false }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// Called by ops after computing their output. `backward` receives the
    /// output gradient and must accumulate into each tracked input.
    pub(crate) fn record(
        &mut self,
        output: &mut Tensor,
        backward: impl FnOnce(&[f64], &mut GradStore) + 'static,
    ) {
        debug_assert!(self.recording);
        output.mark_tracked();
        self.nodes.push(Node { output: output.id(), backward: Box::new(backward) });
    }

    /// True when the op should record a node: the tape is live and at least
    /// one input participates in differentiation.
    pub(crate) fn should_record(&self, inputs: &[&Tensor]) -> bool {
        self.recording && inputs.iter().any(|t| t.tracks_grad())
    }

    /// Runs the backward pass from a scalar `loss`, consuming the tape.
    ///
    /// Each node is visited exactly once, in reverse execution order. On
    /// return the store holds a gradient buffer for every leaf tensor the
    /// loss reaches; intermediate gradients are dropped once their producing
    /// node has consumed them.
    pub fn backward(mut self, loss: &Tensor) -> GradStore {
        assert_eq!(loss.numel(), 1, "backward expects a scalar loss, got shape {:?}", loss.shape());
        let mut store = GradStore::new();
        store.insert(loss.id(), vec![1.0]);
        for node in self.nodes.drain(..).rev() {
            if let Some(grad) = store.take(node.output) {
                (node.backward)(&grad, &mut store);
            }
        }
        store
    }
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops;

    #[test]
    fn backward_visits_reverse_order_once() {
        // loss = relu(a) + relu(a): gradient accumulates from both uses.
        let a = Tensor::new(vec![2.0], &[1]).requires_grad(true);
        let mut tape = Tape::new();
        let r1 = ops::relu(&mut tape, &a);
        let r2 = ops::relu(&mut tape, &a);
        let s = ops::add(&mut tape, &r1, &r2).unwrap();
        let loss = ops::sum_all(&mut tape, &s);
        let grads = tape.backward(&loss);
        assert_eq!(grads.get(&a).unwrap(), &[2.0]);
    }

    #[test]
    fn no_grad_tape_records_nothing() {
        let a = Tensor::new(vec![1.0, -1.0], &[2]).requires_grad(true);
        let mut tape = Tape::no_grad();
        let out = ops::relu(&mut tape, &a);
        assert_eq!(tape.num_nodes(), 0);
        assert!(!out.tracks_grad());
    }

    #[test]
    fn unreached_branches_get_no_gradient() {
        let a = Tensor::new(vec![1.0], &[1]).requires_grad(true);
        let b = Tensor::new(vec![1.0], &[1]).requires_grad(true);
        let mut tape = Tape::new();
        let _dead_end = ops::relu(&mut tape, &b);
        let live = ops::relu(&mut tape, &a);
        let loss = ops::sum_all(&mut tape, &live);
        let grads = tape.backward(&loss);
        assert!(grads.get(&a).is_some());
        assert!(grads.get(&b).is_none());
    }
}
