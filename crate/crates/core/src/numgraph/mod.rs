//! Minimal reverse-mode automatic differentiation over dense matrices, with
//! multilayer-perceptron helpers, Adam, and a finite-difference checker.

mod adam;
mod gradcheck;
mod graph;
mod mlp;
mod tensor;


use std::collections::BTreeMap;

pub use adam::{adam_step, Adam, AdamConfig, AdamState};
pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport, ParamCheck, ROUNDING_ULPS};
pub use graph::{Gradients, Graph, NodeId};
pub use mlp::{mlp_build, Activation, Mlp, MlpSpec};
pub use tensor::Tensor;

use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GraphError {
    #[error("shape mismatch at node {node} ({op}): {detail}")]
    ShapeMismatch {
        node: usize,
        op: &'static str,
        detail: String,
    },
    #[error("non-finite value produced at node {node} ({op})")]
    NonFinite { node: usize, op: &'static str },
    #[error("input `{0}` was neither fed nor bound")]
    MissingInput(String),
    #[error("no input or parameter named `{0}`")]
    UnknownName(String),
    #[error("graph has not been evaluated; call forward before backward")]
    NotEvaluated,
    #[error("non-finite gradient for `{0}`")]
    NonFiniteGradient(String),
    #[error("invalid tensor: {0}")]
    BadTensor(String),
}

/// Named parameter tensors in a stable (sorted) order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    tensors: BTreeMap<String, Tensor<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            tensors: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) {
        self.tensors.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.tensors.get_mut(name)
    }

    /// Lookup that panics with the missing name; used where the layout is
    /// fixed at construction.
    pub fn expect(&self, name: &str) -> &Tensor<T> {
        self.tensors
            .get(name)
            .unwrap_or_else(|| panic!("parameter `{name}` missing from store"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.tensors.iter()
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

    pub fn extend(&mut self, items: impl IntoIterator<Item = (String, Tensor<T>)>) {
        self.tensors.extend(items);
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }
}
