//! Named parameter storage and per-forward binding onto a [`Graph`].

use std::cell::RefCell;

use sha2::{Digest, Sha256};

use crate::graph::{Gradients, Graph, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub frozen: bool,
}

/// Flat, ordered collection of named parameters. Registration order is the
/// serialisation order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter. Panics on a duplicate name, which is always a
    /// model-construction bug.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor, frozen: bool) -> ParamId {
        let name = name.into();
        assert!(self.find(&name).is_none(), "duplicate parameter name {name}");
        self.params.push(Param {
            name,
            value,
            frozen,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn trainable(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.iter().filter(|(_, p)| !p.frozen).map(|(id, _)| id)
    }

    pub fn num_scalars(&self, frozen: bool) -> usize {
        self.params
            .iter()
            .filter(|p| p.frozen == frozen)
            .map(|p| p.value.len())
            .sum()
    }

    /// SHA-256 over names, shapes and exact bit patterns of the selected
    /// parameters, hex encoded.
    pub fn checksum(&self, select: impl Fn(&Param) -> bool) -> String {
        let mut h = Sha256::new();
        for p in self.params.iter().filter(|p| select(p)) {
            h.update(p.name.as_bytes());
            h.update((p.value.rows() as u64).to_le_bytes());
            h.update((p.value.cols() as u64).to_le_bytes());
            h.update(p.value.to_le_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn frozen_checksum(&self) -> String {
        self.checksum(|p| p.frozen)
    }
}

/// Binds parameters onto a graph for one forward pass. Each parameter is
/// bound at most once so its gradient accumulates on a single leaf; frozen
/// parameters become constants and never receive gradients.
pub struct Session<'a> {
    graph: &'a Graph,
    store: &'a ParamStore,
    bound: RefCell<Vec<Option<Var>>>,
}

impl<'a> Session<'a> {
    pub fn new(graph: &'a Graph, store: &'a ParamStore) -> Self {
        Self {
            graph,
            store,
            bound: RefCell::new(vec![None; store.len()]),
        }
    }

    pub fn graph(&self) -> &'a Graph {
        self.graph
    }

    pub fn store(&self) -> &'a ParamStore {
        self.store
    }

    pub fn param(&self, id: ParamId) -> Var {
        if let Some(v) = self.bound.borrow()[id.0] {
            return v;
        }
        let p = &self.store.params[id.0];
        let v = if p.frozen {
            self.graph.constant(p.value.clone())
        } else {
            self.graph.param(p.value.clone())
        };
        self.bound.borrow_mut()[id.0] = Some(v);
        v
    }

    /// Gradients of trainable parameters touched by this pass.
    pub fn param_grads(&self, grads: &Gradients) -> Vec<(ParamId, Tensor)> {
        self.bound
            .borrow()
            .iter()
            .enumerate()
            .filter_map(|(i, v)| {
                let v = (*v)?;
                if self.store.params[i].frozen {
                    return None;
                }
                grads.get(v).map(|g| (ParamId(i), g.clone()))
            })
            .collect()
    }
}
