//! Named parameter store with gradient buffers.

use crate::error::{CoreError, Result};
use crate::matrix::Matrix;
use std::collections::BTreeMap;

/// One learnable tensor and its accumulated gradient.
#[derive(Debug, Clone)]
pub struct Param {
    pub value: Matrix,
    pub grad: Matrix,
}

/// Collection of named parameters. Iteration order is the lexicographic
/// name order, which keeps optimizer updates and checkpoints deterministic.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: BTreeMap<String, Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Register a parameter. Names are unique.
    pub fn insert(&mut self, name: &str, value: Matrix) -> Result<()> {
        if self.entries.contains_key(name) {
            return Err(CoreError::InvalidConfig(format!("duplicate parameter name {name:?}")));
        }
        let grad = Matrix::zeros(value.rows(), value.cols());
        self.entries.insert(name.to_string(), Param { value, grad });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.entries.get(name)
    }

    pub fn value(&self, name: &str) -> &Matrix {
        &self.entries.get(name).unwrap_or_else(|| panic!("unknown parameter {name:?}")).value
    }

    pub fn set_value(&mut self, name: &str, value: Matrix) {
        let p = self.entries.get_mut(name).unwrap_or_else(|| panic!("unknown parameter {name:?}"));
        assert_eq!(p.value.shape(), value.shape(), "parameter shape is fixed");
        p.value = value;
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|s| s.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn zero_grads(&mut self) {
        for p in self.entries.values_mut() {
            p.grad = Matrix::zeros(p.value.rows(), p.value.cols());
        }
    }

    /// Add `delta` into the gradient buffer of `name`.
    pub fn accumulate_grad(&mut self, name: &str, delta: &Matrix) -> Result<()> {
        let p = self
            .entries
            .get_mut(name)
            .ok_or_else(|| CoreError::InvalidConfig(format!("unknown parameter {name:?}")))?;
        if p.grad.shape() != delta.shape() {
            return Err(CoreError::ShapeMismatch {
                op: "accumulate_grad",
                detail: format!("{name}: {:?} vs {:?}", p.grad.shape(), delta.shape()),
            });
        }
        p.grad = p.grad.add(delta)?;
        Ok(())
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.entries.values().map(|p| p.value.rows() * p.value.cols()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_name_rejected() {
        let mut s = ParamStore::new();
        s.insert("w", Matrix::zeros(2, 2)).unwrap();
        assert!(s.insert("w", Matrix::zeros(2, 2)).is_err());
    }

    #[test]
    fn grad_shape_tracks_value_shape() {
        let mut s = ParamStore::new();
        s.insert("w", Matrix::zeros(3, 4)).unwrap();
        let p = s.get("w").unwrap();
        assert_eq!(p.grad.shape(), (3, 4));
        let bad = Matrix::zeros(4, 3);
        assert!(s.accumulate_grad("w", &bad).is_err());
    }

    #[test]
    fn iteration_is_name_ordered() {
        let mut s = ParamStore::new();
        s.insert("b", Matrix::zeros(1, 1)).unwrap();
        s.insert("a", Matrix::zeros(1, 1)).unwrap();
        let names: Vec<&str> = s.names().collect();
        assert_eq!(names, vec!["a", "b"]);
    }
}
