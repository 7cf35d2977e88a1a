//! Named parameter storage and per-step binding onto a tape.

use std::cell::RefCell;
use std::collections::BTreeMap;

use savp_tensor::{Element, Gradients, Tape, Tensor, Var};

use crate::error::{Error, Result};

/// Parameters keyed by dotted names such as `gen.lstm1.w`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<F: Element> {
    tensors: BTreeMap<String, Tensor<F>>,
}

impl<F: Element> ParamStore<F> {
    pub fn new() -> Self {
        Self {
            tensors: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<F>) {
        self.tensors.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<F>> {
        self.tensors.get(name).ok_or_else(|| Error::MissingParam(name.into()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<F>> {
        self.tensors.get_mut(name).ok_or_else(|| Error::MissingParam(name.into()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<F>)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<F>)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    pub fn cast<G: Element>(&self) -> ParamStore<G> {
        ParamStore {
            tensors: self.tensors.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }
}

/// Exposes stored parameters as tape leaves, creating each leaf on first use.
pub struct Binder<'s, 't, F: Element> {
    store: &'s ParamStore<F>,
    tape: &'t Tape<F>,
    bound: RefCell<BTreeMap<String, Var<'t, F>>>,
    frozen: bool,
}

impl<'s, 't, F: Element> Binder<'s, 't, F> {
    pub fn new(store: &'s ParamStore<F>, tape: &'t Tape<F>) -> Self {
        Self {
            store,
            tape,
            bound: RefCell::new(BTreeMap::new()),
            frozen: false,
        }
    }

    /// Binds parameters as constants, so no backward graph is kept.
    pub fn frozen(store: &'s ParamStore<F>, tape: &'t Tape<F>) -> Self {
        Self {
            frozen: true,
            ..Self::new(store, tape)
        }
    }

    pub fn tape(&self) -> &'t Tape<F> {
        self.tape
    }

    pub fn store(&self) -> &'s ParamStore<F> {
        self.store
    }

    pub fn param(&self, name: &str) -> Result<Var<'t, F>> {
        if let Some(v) = self.bound.borrow().get(name) {
            return Ok(v.clone());
        }
        let value = self.store.get(name)?.clone();
        let var = if self.frozen {
            self.tape.constant(value)
        } else {
            self.tape.leaf(value)
        };
        self.bound.borrow_mut().insert(name.to_string(), var.clone());
        Ok(var)
    }

    /// Gradients of every bound parameter whose name starts with `prefix`.
    /// Parameters the loss does not reach get zeros.
    pub fn grads(&self, grads: &Gradients<F>, prefix: &str) -> BTreeMap<String, Tensor<F>> {
        self.bound
            .borrow()
            .iter()
            .filter(|(name, _)| name.starts_with(prefix))
            .map(|(name, var)| (name.clone(), grads.wrt(var)))
            .collect()
    }
}
