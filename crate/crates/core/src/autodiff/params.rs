//! Named parameter collections.

use indexmap::IndexMap;
use sha2::{Digest, Sha256};

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Ordered map from parameter name to tensor. Iteration order is insertion
/// order, which makes optimizer sweeps and checkpoints deterministic.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    entries: IndexMap<String, Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet { entries: IndexMap::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.entries.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.get_mut(name)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor> {
        self.entries.get(name).ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|k| k.as_str())
    }

    /// Total number of scalar coordinates across all tensors.
    pub fn coord_count(&self) -> usize {
        self.entries.values().map(|t| t.len()).sum()
    }

    /// Absorb all entries of `other`, which must not collide by name.
    pub fn extend(&mut self, other: ParamSet) {
        for (name, value) in other.entries {
            debug_assert!(!self.entries.contains_key(&name), "duplicate param {name}");
            self.entries.insert(name, value);
        }
    }

    /// SHA-256 over names, shapes and raw little-endian values. Used by the
    /// trainer to prove that pseudo steps leave parameters untouched.
    pub fn checksum(&self) -> String {
        let mut hasher = Sha256::new();
        for (name, tensor) in &self.entries {
            hasher.update(name.as_bytes());
            hasher.update([0u8]);
            for &extent in tensor.shape() {
                hasher.update((extent as u64).to_le_bytes());
            }
            for &v in tensor.data() {
                hasher.update(v.to_le_bytes());
            }
        }
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

impl FromIterator<(String, Tensor)> for ParamSet {
    fn from_iter<I: IntoIterator<Item = (String, Tensor)>>(iter: I) -> Self {
        ParamSet { entries: iter.into_iter().collect() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iteration_order_is_insertion_order() {
        let mut ps = ParamSet::new();
        ps.insert("z", Tensor::scalar(1.0));
        ps.insert("a", Tensor::scalar(2.0));
        let names: Vec<_> = ps.names().collect();
        assert_eq!(names, vec!["z", "a"]);
    }

    #[test]
    fn checksum_tracks_values() {
        let mut ps = ParamSet::new();
        ps.insert("w", Tensor::from_vec(&[2], vec![1.0, 2.0]).unwrap());
        let before = ps.checksum();
        assert_eq!(before, ps.checksum());
        ps.get_mut("w").unwrap().data_mut()[0] = 1.5;
        assert_ne!(before, ps.checksum());
    }
}
