use std::collections::HashMap;

use indexmap::IndexMap;
use stochsr_tensor::{BnState, Element, Tape, Tensor, Var};

use crate::error::{Error, Result};

/// Named parameter tensors of one network plus the running state of its
/// batch-norm layers. Iteration order is insertion order, which is fixed by
/// the builder, so walks over the set are deterministic.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet<E: Element> {
    params: IndexMap<String, Tensor<E>>,
    bn_states: IndexMap<String, BnState<E>>,
}

impl<E: Element> Default for ParamSet<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Element> ParamSet<E> {
    pub fn new() -> Self {
        ParamSet {
            params: IndexMap::new(),
            bn_states: IndexMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<E>) {
        let name = name.into();
        let prev = self.params.insert(name.clone(), tensor);
        assert!(prev.is_none(), "duplicate parameter name {name}");
    }

    pub fn insert_bn(&mut self, name: impl Into<String>, state: BnState<E>) {
        let name = name.into();
        let prev = self.bn_states.insert(name.clone(), state);
        assert!(prev.is_none(), "duplicate batch-norm state name {name}");
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<E>> {
        self.params
            .get(name)
            .ok_or_else(|| Error::Config(format!("unknown parameter {name}")))
    }

    pub fn set(&mut self, name: &str, tensor: Tensor<E>) -> Result<()> {
        match self.params.get_mut(name) {
            Some(slot) => {
                if slot.shape() != tensor.shape() {
                    return Err(Error::Config(format!(
                        "parameter {name}: shape {:?} cannot replace {:?}",
                        tensor.shape(),
                        slot.shape()
                    )));
                }
                *slot = tensor;
                Ok(())
            }
            None => Err(Error::Config(format!("unknown parameter {name}"))),
        }
    }

    pub fn bn_state_mut(&mut self, name: &str) -> Result<&mut BnState<E>> {
        self.bn_states
            .get_mut(name)
            .ok_or_else(|| Error::Config(format!("unknown batch-norm state {name}")))
    }

    pub fn has_bn_state(&self, name: &str) -> bool {
        self.bn_states.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<E>)> {
        self.params.iter()
    }

    pub fn iter_bn(&self) -> impl Iterator<Item = (&String, &BnState<E>)> {
        self.bn_states.iter()
    }

    pub fn iter_bn_mut(&mut self) -> impl Iterator<Item = (&String, &mut BnState<E>)> {
        self.bn_states.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total trainable scalar count.
    pub fn num_scalars(&self) -> usize {
        self.params.values().map(|t| t.numel()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.params.values().all(|t| t.is_finite())
    }

    pub fn cast<F: Element>(&self) -> ParamSet<F> {
        ParamSet {
            params: self
                .params
                .iter()
                .map(|(k, v)| (k.clone(), v.cast()))
                .collect(),
            bn_states: self
                .bn_states
                .iter()
                .map(|(k, v)| (k.clone(), v.cast()))
                .collect(),
        }
    }

    /// Largest absolute difference over parameters and running statistics.
    /// Used to verify freezing contracts.
    pub fn max_abs_diff(&self, other: &ParamSet<E>) -> E {
        let mut worst = E::zero();
        for (name, t) in &self.params {
            let o = &other.params[name];
            worst = worst.max(t.max_abs_diff(o));
        }
        for (name, s) in &self.bn_states {
            let o = &other.bn_states[name];
            worst = worst.max(s.running_mean.max_abs_diff(&o.running_mean));
            worst = worst.max(s.running_var.max_abs_diff(&o.running_var));
        }
        worst
    }

    /// Binds every parameter onto a tape. With `trainable` the vars are
    /// gradient leaves; otherwise the network runs gradient-blocked.
    pub fn bind(&self, tape: &mut Tape<E>, trainable: bool) -> Binding {
        let mut vars = HashMap::with_capacity(self.params.len());
        for (name, tensor) in &self.params {
            vars.insert(name.clone(), tape.leaf(tensor.clone(), trainable));
        }
        Binding { vars }
    }
}

/// Per-tape view of a [`ParamSet`]: parameter name to tape var.
pub struct Binding {
    vars: HashMap<String, Var>,
}

impl Binding {
    pub fn var(&self, name: &str) -> Var {
        *self
            .vars
            .get(name)
            .unwrap_or_else(|| panic!("parameter {name} not bound"))
    }

    /// Swaps one parameter's var, e.g. to probe a single tensor with the
    /// finite-difference harness.
    pub fn with_override(mut self, name: &str, var: Var) -> Binding {
        assert!(
            self.vars.insert(name.to_string(), var).is_some(),
            "parameter {name} not bound"
        );
        self
    }

    /// Reads gradients back out of the tape, keyed like the param set.
    pub fn grads<E: Element>(&self, tape: &Tape<E>) -> HashMap<String, Tensor<E>> {
        self.vars
            .iter()
            .filter_map(|(name, &var)| tape.grad(var).map(|g| (name.clone(), g.clone())))
            .collect()
    }
}
