//! Reverse-mode autodiff over [`Tensor`] values.
//!
//! A [`Tape`] records every op executed through it. Each recorded op keeps a
//! backward closure that maps the gradient of its output to gradients of its
//! inputs. [`Tape::backward`] replays those closures in exact reverse order.
//! Closures are `FnOnce`, so a tape can be differentiated once.

use std::cell::{Cell, RefCell};
use std::sync::Arc;

use crate::dtype::Scalar;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a value recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// Backward closure: receives the output gradient and a mask of which inputs
/// need a gradient; returns one optional gradient per input.
pub type BackwardFn<T> = Box<dyn FnOnce(&Tensor<T>, &[bool]) -> Vec<Option<Tensor<T>>>>;

struct Node<T> {
    value: Arc<Tensor<T>>,
    requires_grad: bool,
    inputs: Vec<Var>,
    backward: Option<BackwardFn<T>>,
}

pub struct Tape<T> {
    nodes: RefCell<Vec<Node<T>>>,
    grad_enabled: bool,
    consumed: Cell<bool>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            grad_enabled: true,
            consumed: Cell::new(false),
        }
    }

    /// A tape that records values only; used for evaluation.
    pub fn no_grad() -> Self {
        Self {
            grad_enabled: false,
            ..Self::new()
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, node: Node<T>) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        Var(nodes.len() - 1)
    }

    /// A value that does not receive a gradient.
    pub fn constant(&self, value: impl Into<Arc<Tensor<T>>>) -> Var {
        self.push(Node {
            value: value.into(),
            requires_grad: false,
            inputs: Vec::new(),
            backward: None,
        })
    }

    /// A leaf whose gradient is wanted.
    pub fn leaf(&self, value: impl Into<Arc<Tensor<T>>>) -> Var {
        self.push(Node {
            value: value.into(),
            requires_grad: self.grad_enabled,
            inputs: Vec::new(),
            backward: None,
        })
    }

    pub fn value(&self, v: Var) -> Arc<Tensor<T>> {
        Arc::clone(&self.nodes.borrow()[v.0].value)
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].requires_grad
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    /// Record an op output. The closure is only kept when some input needs a
    /// gradient.
    pub fn record(&self, value: Tensor<T>, inputs: &[Var], backward: BackwardFn<T>) -> Var {
        let requires_grad = self.grad_enabled && inputs.iter().any(|&v| self.requires_grad(v));
        self.push(Node {
            value: Arc::new(value),
            requires_grad,
            inputs: inputs.to_vec(),
            backward: requires_grad.then_some(backward),
        })
    }

    /// Whether recording a backward closure for these inputs is worthwhile.
    pub fn any_requires_grad(&self, inputs: &[Var]) -> bool {
        self.grad_enabled && inputs.iter().any(|&v| self.requires_grad(v))
    }

    /// Back-propagate from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if !self.grad_enabled {
            return Err(Error::Usage("backward on a no-grad tape".into()));
        }
        if self.consumed.replace(true) {
            return Err(Error::Usage("backward already ran on this tape".into()));
        }
        let mut nodes = self.nodes.borrow_mut();
        let n = nodes.len();
        if loss.0 >= n {
            return Err(Error::Usage(format!("loss var {} not on this tape", loss.0)));
        }
        if nodes[loss.0].value.len() != 1 {
            return Err(Error::Usage(format!(
                "loss must be a scalar, got shape {:?}",
                nodes[loss.0].value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..n).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(nodes[loss.0].value.shape().to_vec(), T::one()));

        for i in (0..=loss.0).rev() {
            let Some(grad_out) = grads[i].take() else {
                continue;
            };
            let node = &mut nodes[i];
            if let Some(backward) = node.backward.take() {
                let inputs = node.inputs.clone();
                let needs: Vec<bool> = inputs.iter().map(|v| nodes[v.0].requires_grad).collect();
                let input_grads = backward(&grad_out, &needs);
                debug_assert_eq!(input_grads.len(), inputs.len());
                for ((v, g), need) in inputs.iter().zip(input_grads).zip(&needs) {
                    let (Some(g), true) = (g, *need) else { continue };
                    match &mut grads[v.0] {
                        Some(acc) => acc.add_assign(&g),
                        slot @ None => *slot = Some(g),
                    }
                }
            }
            grads[i] = Some(grad_out);
        }
        // Drop closures of ops recorded after the loss as well.
        for node in nodes.iter_mut() {
            node.backward = None;
        }
        let shapes = nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }
}

/// Gradients produced by one backward pass.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or exact zeros when `v` did not influence the loss.
    pub fn get_or_zeros(&self, v: Var) -> Tensor<T> {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(self.shapes[v.0].clone()))
    }

    pub fn take(&mut self, v: Var) -> Tensor<T> {
        self.grads[v.0]
            .take()
            .unwrap_or_else(|| Tensor::zeros(self.shapes[v.0].clone()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square(tape: &Tape<f64>, x: Var) -> Var {
        let xv = tape.value(x);
        let out = xv.map(|v| v * v);
        tape.record(
            out,
            &[x],
            Box::new(move |g, _| {
                let data = g.data().iter().zip(xv.data()).map(|(g, x)| 2.0 * g * x).collect();
                vec![Some(Tensor::from_vec(g.shape().to_vec(), data).unwrap())]
            }),
        )
    }

    #[test]
    fn backward_through_chain() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::scalar(3.0));
        let y = square(&tape, x);
        let z = square(&tape, y);
        let grads = tape.backward(z).unwrap();
        // d/dx x^4 = 4x^3
        assert_eq!(grads.get(x).unwrap().data(), &[108.0]);
    }

    #[test]
    fn second_backward_is_an_error() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::scalar(1.0));
        let y = square(&tape, x);
        tape.backward(y).unwrap();
        assert!(matches!(tape.backward(y), Err(Error::Usage(_))));
    }

    #[test]
    fn unused_leaf_gets_zero_grad() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::scalar(2.0));
        let unused = tape.leaf(Tensor::<f64>::ones([2, 3]));
        let y = square(&tape, x);
        let grads = tape.backward(y).unwrap();
        let g = grads.get_or_zeros(unused);
        assert_eq!(g.shape(), &[2, 3]);
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constants_do_not_record_closures() {
        let tape = Tape::<f64>::new();
        let c = tape.constant(Tensor::scalar(2.0));
        let y = square(&tape, c);
        assert!(!tape.requires_grad(y));
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::<f64>::ones([2]));
        assert!(tape.backward(x).is_err());
    }
}
