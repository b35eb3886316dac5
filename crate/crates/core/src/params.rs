//! Named parameter storage and the evaluation context that binds parameters
//! to graph leaves.
//!
//! Layers hold [`ParamId`]s, never values, so one model description can be
//! evaluated against the live parameters, the EMA shadow, or an `f64` copy.

use std::cell::RefCell;
use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::tensor::{Element, Gradients, Graph, Rng, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry<T> {
    pub name: String,
    pub value: Tensor<T>,
    /// Buffers (permutations, signs) are stored but never optimized.
    pub trainable: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T> {
    entries: Vec<ParamEntry<T>>,
    by_name: HashMap<String, usize>,
}

impl<T: Element> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    /// Registers a tensor. Names must be unique.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>, trainable: bool) -> ParamId {
        let name = name.into();
        assert!(
            !self.by_name.contains_key(&name),
            "duplicate parameter name {name}"
        );
        self.by_name.insert(name.clone(), self.entries.len());
        self.entries.push(ParamEntry {
            name,
            value,
            trainable,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].value
    }

    pub fn set(&mut self, id: ParamId, value: Tensor<T>) -> Result<()> {
        let slot = &mut self.entries[id.0].value;
        if slot.shape() != value.shape() {
            return Err(Error::ShapeMismatch {
                op: "ParamStore::set",
                lhs: slot.shape(),
                rhs: value.shape(),
            });
        }
        *slot = value;
        Ok(())
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).map(|&i| ParamId(i))
    }

    pub fn entries(&self) -> &[ParamEntry<T>] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry<T>] {
        &mut self.entries
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    /// Total number of trainable scalars.
    pub fn trainable_scalars(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.trainable)
            .map(|e| e.value.numel())
            .sum()
    }

    pub fn cast<U: Element>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|e| ParamEntry {
                    name: e.name.clone(),
                    value: e.value.cast(),
                    trainable: e.trainable,
                })
                .collect(),
            by_name: self.by_name.clone(),
        }
    }

    /// Adds `N(0, std²)` noise to every trainable tensor.
    pub fn perturb(&mut self, rng: &mut Rng, std: f64) {
        for e in self.entries.iter_mut().filter(|e| e.trainable) {
            for v in e.value.data_mut() {
                *v += T::of(std * rng.normal());
            }
        }
    }

    /// True when both stores hold the same names and shapes in the same order.
    pub fn congruent<U: Element>(&self, other: &ParamStore<U>) -> bool {
        self.entries.len() == other.entries.len()
            && self
                .entries
                .iter()
                .zip(&other.entries)
                .all(|(a, b)| a.name == b.name && a.value.shape() == b.value.shape())
    }
}

/// Binds a [`ParamStore`] to a [`Graph`] for one evaluation. Each parameter
/// becomes a single leaf, so shared parameters accumulate gradient from every
/// use.
pub struct Cx<'a, T: Element> {
    pub g: &'a Graph<T>,
    store: &'a ParamStore<T>,
    leaves: RefCell<Vec<Option<Var>>>,
    init: Option<RefCell<Vec<(ParamId, Tensor<T>)>>>,
}

impl<'a, T: Element> Cx<'a, T> {
    pub fn new(g: &'a Graph<T>, store: &'a ParamStore<T>) -> Self {
        Self {
            g,
            store,
            leaves: RefCell::new(vec![None; store.len()]),
            init: None,
        }
    }

    /// Context for a data-dependent initialization pass: layers that support
    /// it derive their parameters from the activations they see and report
    /// them through [`Cx::init_updates`].
    pub fn for_data_init(g: &'a Graph<T>, store: &'a ParamStore<T>) -> Self {
        Self {
            init: Some(RefCell::new(Vec::new())),
            ..Self::new(g, store)
        }
    }

    pub fn store(&self) -> &ParamStore<T> {
        self.store
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        self.store.get(id)
    }

    /// Leaf for parameter `id`, created on first use.
    pub fn p(&self, id: ParamId) -> Var {
        if let Some(v) = self.leaves.borrow()[id.0] {
            return v;
        }
        let entry = &self.store.entries()[id.0];
        let v = self.g.leaf(entry.value.clone(), entry.trainable);
        self.leaves.borrow_mut()[id.0] = Some(v);
        v
    }

    pub fn is_data_init(&self) -> bool {
        self.init.is_some()
    }

    /// Whether `id` already received a value during this init pass.
    pub fn initialized_here(&self, id: ParamId) -> bool {
        self.init
            .as_ref()
            .is_some_and(|u| u.borrow().iter().any(|(p, _)| *p == id))
    }

    /// Records an initialization value; later uses in this pass see it.
    pub fn set_init(&self, id: ParamId, value: Tensor<T>) -> Var {
        let v = self.g.constant(value.clone());
        if let Some(u) = &self.init {
            u.borrow_mut().push((id, value));
        }
        self.leaves.borrow_mut()[id.0] = Some(v);
        v
    }

    pub fn init_updates(self) -> Vec<(ParamId, Tensor<T>)> {
        self.init.map(|u| u.into_inner()).unwrap_or_default()
    }

    /// Gradient per parameter id, `None` where the loss does not depend on it.
    pub fn param_grads(&self, grads: &Gradients<T>) -> Vec<Option<Tensor<T>>> {
        self.leaves
            .borrow()
            .iter()
            .map(|leaf| leaf.and_then(|v| grads.get(v).cloned()))
            .collect()
    }
}
