//! Tape-based reverse-mode differentiation.
//!
//! Every operation on a [`Var`] appends a node to its [`Tape`]. Node ids are
//! assigned in creation order, which is already a topological order, so
//! [`Tape::backward`] replays the nodes in reverse and visits each one once.
//!
//! ```
//! use savp_tensor::{Tape, Tensor};
//!
//! let tape = Tape::new();
//! let x = tape.leaf(Tensor::<f64>::from_f64([3], &[1.0, 2.0, 3.0]).unwrap());
//! let loss = x.square().sum();
//! let grads = tape.backward(&loss).unwrap();
//! assert_eq!(grads.wrt(&x).data(), &[2.0, 4.0, 6.0]);
//! ```

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

/// Maps the upstream gradient to one gradient per parent. The flags say which
/// parents need a gradient so expensive branches can be skipped.
pub(crate) type BackwardFn<F> = Box<dyn Fn(&Tensor<F>, &[bool]) -> Vec<Option<Tensor<F>>>>;

struct Node<F> {
    parents: Vec<usize>,
    requires_grad: bool,
    backward: Option<BackwardFn<F>>,
}

/// Operation record for one forward pass. Create a fresh tape (or
/// [`Tape::clear`] an old one) per training step.
pub struct Tape<F: Element> {
    nodes: RefCell<Vec<Node<F>>>,
}

impl<F: Element> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

/// A tensor value recorded on a tape.
#[derive(Clone)]
pub struct Var<'t, F: Element> {
    tape: &'t Tape<F>,
    id: usize,
    value: Rc<Tensor<F>>,
    requires_grad: bool,
}

impl<F: Element> Tape<F> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
        }
    }

    /// A differentiable input.
    pub fn leaf(&self, value: Tensor<F>) -> Var<'_, F> {
        self.push(value, Vec::new(), true, None)
    }

    /// An input that never receives a gradient.
    pub fn constant(&self, value: Tensor<F>) -> Var<'_, F> {
        self.push(value, Vec::new(), false, None)
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Drops every recorded node. Requires that no [`Var`] is still alive.
    pub fn clear(&mut self) {
        self.nodes.get_mut().clear();
    }

    fn push(
        &self,
        value: Tensor<F>,
        parents: Vec<usize>,
        requires_grad: bool,
        backward: Option<BackwardFn<F>>,
    ) -> Var<'_, F> {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node {
            parents,
            requires_grad,
            backward,
        });
        Var {
            tape: self,
            id,
            value: Rc::new(value),
            requires_grad,
        }
    }

    /// Records an operation result. The backward rule is dropped when no
    /// parent requires a gradient.
    pub(crate) fn record<'t>(
        &'t self,
        value: Tensor<F>,
        parents: &[&Var<'t, F>],
        backward: impl Fn(&Tensor<F>, &[bool]) -> Vec<Option<Tensor<F>>> + 'static,
    ) -> Var<'t, F> {
        let requires_grad = parents.iter().any(|p| p.requires_grad);
        if requires_grad {
            let ids = parents.iter().map(|p| p.id).collect();
            self.push(value, ids, true, Some(Box::new(backward)))
        } else {
            self.push(value, Vec::new(), false, None)
        }
    }

    /// Gradients of a scalar `loss` with respect to every differentiable leaf.
    /// Gradients from multiple paths are summed.
    pub fn backward(&self, loss: &Var<'_, F>) -> Result<Gradients<F>> {
        if !std::ptr::eq(loss.tape, self) {
            return Err(TensorError::ForeignTape("backward"));
        }
        if loss.value.numel() != 1 {
            return Err(TensorError::NotScalar(loss.value.shape().to_vec()));
        }
        if !loss.requires_grad {
            return Err(TensorError::Detached);
        }
        let nodes = self.nodes.borrow();
        let mut pending: Vec<Option<Tensor<F>>> = Vec::new();
        pending.resize_with(loss.id + 1, || None);
        pending[loss.id] = Some(Tensor::ones(loss.value.shape().to_vec()));
        let mut leaves = HashMap::new();
        for id in (0..=loss.id).rev() {
            let Some(grad) = pending[id].take() else {
                continue;
            };
            let node = &nodes[id];
            let Some(rule) = &node.backward else {
                if node.requires_grad {
                    leaves.insert(id, grad);
                }
                continue;
            };
            let needs: Vec<bool> = node
                .parents
                .iter()
                .map(|&p| nodes[p].requires_grad)
                .collect();
            let parent_grads = rule(&grad, &needs);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for ((&p, g), need) in node.parents.iter().zip(parent_grads).zip(&needs) {
                let (Some(g), true) = (g, *need) else {
                    continue;
                };
                match &mut pending[p] {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
            }
        }
        Ok(Gradients { leaves })
    }
}

/// Leaf gradients produced by [`Tape::backward`].
pub struct Gradients<F> {
    leaves: HashMap<usize, Tensor<F>>,
}

impl<F: Element> Gradients<F> {
    pub fn get(&self, var: &Var<'_, F>) -> Option<&Tensor<F>> {
        self.leaves.get(&var.id)
    }

    /// Gradient for `var`, zero when the loss does not depend on it.
    pub fn wrt(&self, var: &Var<'_, F>) -> Tensor<F> {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(var.value.shape().to_vec()))
    }
}

impl<'t, F: Element> Var<'t, F> {
    pub fn value(&self) -> &Tensor<F> {
        &self.value
    }

    pub(crate) fn value_rc(&self) -> Rc<Tensor<F>> {
        Rc::clone(&self.value)
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn tape(&self) -> &'t Tape<F> {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    /// Same value, cut from the graph.
    pub fn detach(&self) -> Var<'t, F> {
        self.tape.constant((*self.value).clone())
    }

    pub(crate) fn same_tape(&self, other: &Var<'t, F>, op: &'static str) -> Result<()> {
        if std::ptr::eq(self.tape, other.tape) {
            Ok(())
        } else {
            Err(TensorError::ForeignTape(op))
        }
    }
}

impl<F: Element> std::fmt::Debug for Var<'_, F> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}({:?})", self.id, self.value)
    }
}
