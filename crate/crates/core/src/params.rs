//! Named parameter storage.
//!
//! A `ParameterStore` is an ordered (name-sorted) map from tensor name to
//! array. The sort order is the canonical serialization order, so checkpoints
//! written from equal stores are byte-identical. Gradients and optimizer
//! moments reuse the same type.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use num_traits::Float;

use crate::error::{invalid, CoreError, Result};
use crate::scalar::Real;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct ParameterStore<T> {
    entries: BTreeMap<String, Tensor<T>>,
}

impl<T: Real> Default for ParameterStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> ParameterStore<T> {
    pub fn new() -> Self {
        ParameterStore {
            entries: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor<T>) -> Result<()> {
        if self.entries.contains_key(name) {
            return Err(invalid(format!("duplicate parameter name: {name}")));
        }
        self.entries.insert(name.to_string(), tensor);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.entries
            .get(name)
            .ok_or_else(|| CoreError::InvalidInput(format!("missing parameter: {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.entries
            .get_mut(name)
            .ok_or_else(|| CoreError::InvalidInput(format!("missing parameter: {name}")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    /// Mutable references to two distinct entries at once (weight + bias
    /// gradients of one layer, typically).
    pub fn get_mut2(&mut self, a: &str, b: &str) -> Result<(&mut Tensor<T>, &mut Tensor<T>)> {
        if a == b {
            return Err(invalid(format!("get_mut2 needs distinct names, got {a} twice")));
        }
        let mut ta = None;
        let mut tb = None;
        for (k, v) in self.entries.iter_mut() {
            if k == a {
                ta = Some(v);
            } else if k == b {
                tb = Some(v);
            }
        }
        match (ta, tb) {
            (Some(x), Some(y)) => Ok((x, y)),
            (None, _) => Err(CoreError::InvalidInput(format!("missing parameter: {a}"))),
            (_, None) => Err(CoreError::InvalidInput(format!("missing parameter: {b}"))),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Iterate in name order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> Vec<String> {
        self.entries.keys().cloned().collect()
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.entries.values().map(|t| t.numel()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.entries.values().all(|t| t.is_finite())
    }

    /// First entry (by name order) containing a non-finite value, if any.
    pub fn first_non_finite(&self) -> Option<&str> {
        self.iter().find(|(_, t)| !t.is_finite()).map(|(n, _)| n)
    }

    /// A store with the same names and shapes, all zeros. Used for gradients
    /// and optimizer moments.
    pub fn zeros_like(&self) -> Self {
        let mut out = ParameterStore::new();
        for (name, t) in self.iter() {
            out.entries.insert(name.to_string(), Tensor::zeros(t.shape()));
        }
        out
    }

    /// Elementwise cast of every entry.
    pub fn cast<U: Real>(&self) -> ParameterStore<U> {
        let mut out = ParameterStore::new();
        for (name, t) in self.iter() {
            out.entries.insert(name.to_string(), t.cast::<U>());
        }
        out
    }

    /// self += other, entry by entry. Shapes and names must agree.
    pub fn add_assign(&mut self, other: &ParameterStore<T>) -> Result<()> {
        if self.len() != other.len() {
            return Err(CoreError::ShapeMismatch(
                "stores have different entry counts".to_string(),
            ));
        }
        for (name, t) in self.entries.iter_mut() {
            let o = other.get(name)?;
            t.check_shape(o.shape(), name)?;
            t.add_assign(o);
        }
        Ok(())
    }

    pub fn scale(&mut self, s: T) {
        for t in self.entries.values_mut() {
            t.scale(s);
        }
    }

    /// Global L2 norm over all entries.
    pub fn l2_norm(&self) -> f64 {
        let mut acc = 0.0f64;
        for t in self.entries.values() {
            acc += t.sumsq().to_f64();
        }
        acc.sqrt()
    }

    /// Check that names and shapes exactly match a spec list.
    pub fn check_spec(&self, spec: &[(String, Vec<usize>)]) -> Result<()> {
        if self.len() != spec.len() {
            return Err(CoreError::ShapeMismatch(format!(
                "store has {} entries, spec wants {}",
                self.len(),
                spec.len()
            )));
        }
        for (name, shape) in spec {
            let t = self.get(name)?;
            t.check_shape(shape, name)?;
        }
        Ok(())
    }
}
