use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamRole {
    Trainable,
    RunningMean,
    RunningVar,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry<T> {
    pub tensor: Tensor<T>,
    pub role: ParamRole,
}

/// Every tensor of a model, keyed by dotted name, in graph order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T = f32> {
    entries: IndexMap<String, ParamEntry<T>>,
}

impl<T: Float> ParamStore<T> {
    pub fn new() -> Self {
        Self { entries: IndexMap::new() }
    }

    pub(crate) fn insert(&mut self, name: String, tensor: Tensor<T>, role: ParamRole) -> usize {
        let (idx, previous) = self.entries.insert_full(name, ParamEntry { tensor, role });
        assert!(previous.is_none(), "duplicate parameter name");
        idx
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entry(&self, idx: usize) -> &ParamEntry<T> {
        &self.entries[idx]
    }

    pub fn tensor(&self, idx: usize) -> &Tensor<T> {
        &self.entries[idx].tensor
    }

    pub fn tensor_mut(&mut self, idx: usize) -> &mut Tensor<T> {
        &mut self.entries[idx].tensor
    }

    pub fn name(&self, idx: usize) -> &str {
        self.entries.get_index(idx).map(|(k, _)| k.as_str()).expect("index in range")
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.get_index_of(name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.entries.get(name).map(|e| &e.tensor)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.entries.get_mut(name).map(|e| &mut e.tensor)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ParamEntry<T>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Indices of trainable tensors, in graph order.
    pub fn trainable(&self) -> impl Iterator<Item = usize> + '_ {
        self.entries.values().enumerate().filter(|(_, e)| e.role == ParamRole::Trainable).map(|(i, _)| i)
    }

    /// Number of trainable scalars (running statistics excluded).
    pub fn count_trainable(&self) -> usize {
        self.entries.values().filter(|e| e.role == ParamRole::Trainable).map(|e| e.tensor.numel()).sum()
    }

    pub fn count_all(&self) -> usize {
        self.entries.values().map(|e| e.tensor.numel()).sum()
    }

    /// Replaces a tensor, keeping its shape.
    pub fn assign(&mut self, idx: usize, tensor: Tensor<T>) -> Result<()> {
        let (name, entry) = self.entries.get_index_mut(idx).expect("index in range");
        if entry.tensor.shape() != tensor.shape() {
            return Err(Error::Shape(format!(
                "{name}: expected {:?}, got {:?}",
                entry.tensor.shape(),
                tensor.shape()
            )));
        }
        entry.tensor = tensor;
        Ok(())
    }

    /// CRC32 over the f32 little-endian encoding of every tensor.
    pub fn checksum(&self) -> u32 {
        let mut hasher = crc32fast::Hasher::new();
        for e in self.entries.values() {
            for v in e.tensor.data() {
                hasher.update(&(v.as_f64() as f32).to_le_bytes());
            }
        }
        hasher.finalize()
    }

    pub fn cast<U: Float>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|(k, e)| (k.clone(), ParamEntry { tensor: e.tensor.cast(), role: e.role }))
                .collect(),
        }
    }
}
