use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use super::Tensor2D;
use crate::error::{Error, Result};

/// A named trainable (or frozen) value with its accumulated gradient.
#[derive(Clone, Debug)]
pub struct Parameter {
    pub value: Tensor2D,
    pub grad: Tensor2D,
    pub trainable: bool,
}

impl Parameter {
    pub fn new(value: Tensor2D, trainable: bool) -> Self {
        let grad = Tensor2D::zeros(value.rows(), value.cols());
        Self { value, grad, trainable }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

/// Insertion-ordered parameter table keyed by dotted names (`lm.block0.wq`).
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    names: Vec<String>,
    params: Vec<Parameter>,
    index: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: Tensor2D, trainable: bool) -> ParamId {
        if let Some(&id) = self.index.get(name) {
            self.params[id.0] = Parameter::new(value, trainable);
            return id;
        }
        let id = ParamId(self.params.len());
        self.names.push(name.to_string());
        self.params.push(Parameter::new(value, trainable));
        self.index.insert(name.to_string(), id);
        id
    }

    /// Gaussian-initialized matrix.
    pub fn normal(&mut self, name: &str, rows: usize, cols: usize, std: f64, rng: &mut impl Rng) -> ParamId {
        let dist = Normal::new(0.0, std).expect("finite std");
        let data = (0..rows * cols).map(|_| dist.sample(rng)).collect();
        self.insert(name, Tensor2D::new(rows, cols, data).expect("shape"), true)
    }

    pub fn constant(&mut self, name: &str, rows: usize, cols: usize, value: f64) -> ParamId {
        self.insert(name, Tensor2D::filled(rows, cols, value), true)
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{name}`")))
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Parameter)> {
        self.names
            .iter()
            .zip(&self.params)
            .enumerate()
            .map(|(i, (n, p))| (ParamId(i), n.as_str(), p))
    }

    /// Marks every parameter under `prefix` as (non-)trainable.
    pub fn set_trainable(&mut self, prefix: &str, trainable: bool) {
        for (name, p) in self.names.iter().zip(&mut self.params) {
            if name.starts_with(prefix) {
                p.trainable = trainable;
            }
        }
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().fill(0.0);
        }
    }

    pub fn num_values(&self, prefix: &str) -> usize {
        self.iter()
            .filter(|(_, n, _)| n.starts_with(prefix))
            .map(|(_, _, p)| p.value.data().len())
            .sum()
    }

    /// SHA-256 over names, shapes and exact bit patterns of every value under `prefix`.
    pub fn checksum(&self, prefix: &str) -> String {
        let mut hasher = Sha256::new();
        for (_, name, p) in self.iter().filter(|(_, n, _)| n.starts_with(prefix)) {
            hasher.update(name.as_bytes());
            hasher.update((p.value.rows() as u64).to_le_bytes());
            hasher.update((p.value.cols() as u64).to_le_bytes());
            for v in p.value.data() {
                hasher.update(v.to_le_bytes());
            }
        }
        hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Copies every parameter under `prefix` from `other`, keeping local trainable flags.
    pub fn copy_from(&mut self, other: &ParamStore, prefix: &str) -> Result<()> {
        for (_, name, p) in other.iter().filter(|(_, n, _)| n.starts_with(prefix)) {
            let id = self.id(name)?;
            let local = self.get_mut(id);
            if local.value.shape() != p.value.shape() {
                return Err(Error::Checkpoint(format!(
                    "shape mismatch for `{name}`: {:?} vs {:?}",
                    local.value.shape(),
                    p.value.shape()
                )));
            }
            local.value = p.value.clone();
        }
        Ok(())
    }
}
