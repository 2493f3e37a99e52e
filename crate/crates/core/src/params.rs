//! Named parameter storage.
//!
//! All learnable weights live in a [`ParamStore`], addressable by name for
//! checkpointing, gradient checks, and structural tests on model variants.
//! Insertion order is fixed, so optimizer state and gradient vectors align
//! by index.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

#[derive(Clone, Default)]
pub struct ParamStore {
    entries: Vec<(String, Tensor)>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        let name = name.into();
        assert!(
            !self.index.contains_key(&name),
            "duplicate parameter {name}"
        );
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push((name, tensor));
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.position(name).map(|i| &self.entries[i].1)
    }

    pub fn tensor_at(&self, i: usize) -> &Tensor {
        &self.entries[i].1
    }

    pub fn name_at(&self, i: usize) -> &str {
        &self.entries[i].0
    }

    pub fn set_at(&mut self, i: usize, tensor: Tensor) {
        assert_eq!(
            self.entries[i].1.shape(),
            tensor.shape(),
            "set_at shape change for {}",
            self.entries[i].0
        );
        self.entries[i].1 = tensor;
    }

    pub fn set(&mut self, name: &str, tensor: Tensor) -> Result<()> {
        let i = self
            .position(name)
            .ok_or_else(|| Error::CheckpointMismatch(format!("unknown parameter {name}")))?;
        if self.entries[i].1.shape() != tensor.shape() {
            return Err(Error::CheckpointMismatch(format!(
                "parameter {name}: shape {:?} != {:?}",
                self.entries[i].1.shape(),
                tensor.shape()
            )));
        }
        self.entries[i].1 = tensor;
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn has_prefix(&self, prefix: &str) -> bool {
        self.entries.iter().any(|(n, _)| n.starts_with(prefix))
    }

    /// Total scalar count across all parameters.
    pub fn total_len(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    /// Zeroes every parameter whose name starts with `prefix` (test helper
    /// for forcing components like the noise predictor to output zero).
    pub fn zero_prefix(&mut self, prefix: &str) {
        for (name, tensor) in &mut self.entries {
            if name.starts_with(prefix) {
                *tensor = Tensor::zeros(tensor.rows(), tensor.cols());
            }
        }
    }

    /// Lifts every parameter onto a graph as a leaf, in store order.
    pub fn lift<'s>(&'s self, g: &mut Graph) -> Lifted<'s> {
        let vars = self
            .entries
            .iter()
            .map(|(_, t)| g.leaf(t.clone()))
            .collect();
        Lifted { store: self, vars }
    }
}

/// Parameters lifted onto one graph.
pub struct Lifted<'s> {
    store: &'s ParamStore,
    vars: Vec<Var>,
}

impl Lifted<'_> {
    pub fn var(&self, name: &str) -> Var {
        let i = self
            .store
            .position(name)
            .unwrap_or_else(|| panic!("parameter {name} not registered"));
        self.vars[i]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// Collects gradients aligned with store order; parameters the loss
    /// does not reach get zero gradients.
    pub fn grads(&self, grads: &crate::graph::Gradients) -> Vec<Tensor> {
        self.vars
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                grads.wrt(v).cloned().unwrap_or_else(|| {
                    let t = self.store.tensor_at(i);
                    Tensor::zeros(t.rows(), t.cols())
                })
            })
            .collect()
    }
}

/// Uniform init on (-bound, bound).
pub fn uniform(rng: &mut ChaCha12Rng, rows: usize, cols: usize, bound: f64) -> Tensor {
    Tensor::from_fn(rows, cols, |_, _| rng.gen_range(-bound..bound))
}

/// Registers an affine map `in_dim -> out_dim` under `{prefix}.w` / `{prefix}.b`.
pub fn init_linear(
    store: &mut ParamStore,
    rng: &mut ChaCha12Rng,
    prefix: &str,
    in_dim: usize,
    out_dim: usize,
) {
    let bound = 1.0 / (in_dim as f64).sqrt();
    store.insert(format!("{prefix}.w"), uniform(rng, in_dim, out_dim, bound));
    store.insert(format!("{prefix}.b"), uniform(rng, 1, out_dim, bound));
}

/// Registers a 1-D convolution `cin -> cout` with kernel size `k` under
/// `{prefix}.w` / `{prefix}.b`.
pub fn init_conv(
    store: &mut ParamStore,
    rng: &mut ChaCha12Rng,
    prefix: &str,
    cin: usize,
    cout: usize,
    k: usize,
) {
    let bound = 1.0 / ((cin * k) as f64).sqrt();
    store.insert(format!("{prefix}.w"), uniform(rng, cout, cin * k, bound));
    store.insert(format!("{prefix}.b"), uniform(rng, 1, cout, bound));
}
