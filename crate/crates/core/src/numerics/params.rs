use std::collections::BTreeMap;

use super::{DenseArray, Gradients, NumericsError, Tape, Var};

/// Named collection of parameter arrays, iterated in name order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: BTreeMap<String, DenseArray>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: DenseArray) {
        self.entries.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&DenseArray> {
        self.entries.get(name)
    }

    pub(crate) fn get_mut(&mut self, name: &str) -> Option<&mut DenseArray> {
        self.entries.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &DenseArray)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.entries.values().map(DenseArray::len).sum()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            entries: self
                .entries
                .iter()
                .map(|(k, v)| (k.clone(), DenseArray::zeros(v.shape())))
                .collect(),
        }
    }

    /// True when both stores hold the same names with the same shapes.
    pub fn same_layout(&self, other: &ParamStore) -> bool {
        self.entries.len() == other.entries.len()
            && self
                .entries
                .iter()
                .zip(&other.entries)
                .all(|((ka, va), (kb, vb))| ka == kb && va.shape() == vb.shape())
    }

    /// Registers every entry as a parameter leaf on `tape`.
    pub fn bind(&self, tape: &mut Tape) -> BoundParams {
        BoundParams {
            vars: self
                .entries
                .iter()
                .map(|(k, v)| (k.clone(), tape.param(v.clone())))
                .collect(),
        }
    }

    /// `self += scale * other`, entry by entry. Layouts must match.
    pub fn add_scaled(&mut self, other: &ParamStore, scale: f64) -> Result<(), NumericsError> {
        if !self.same_layout(other) {
            return Err(NumericsError::Contract("parameter layouts differ".into()));
        }
        for (dst, src) in self.entries.values_mut().zip(other.entries.values()) {
            for (d, s) in dst.data_mut().iter_mut().zip(src.data()) {
                *d += scale * s;
            }
        }
        Ok(())
    }

    pub fn global_norm(&self) -> f64 {
        self.entries
            .values()
            .flat_map(|v| v.data())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }
}

/// Tape handles for a bound [`ParamStore`].
#[derive(Clone, Debug)]
pub struct BoundParams {
    vars: BTreeMap<String, Var>,
}

impl BoundParams {
    pub fn var(&self, name: &str) -> Result<Var, NumericsError> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| NumericsError::Contract(format!("unknown parameter `{name}`")))
    }

    /// Collects the gradient of every bound parameter into a store.
    pub fn gradients(&self, grads: &Gradients) -> ParamStore {
        let mut out = ParamStore::new();
        for (name, &var) in &self.vars {
            if let Some(g) = grads.get(var) {
                out.insert(name.clone(), g.clone());
            }
        }
        out
    }
}
