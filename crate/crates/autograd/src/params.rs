use std::collections::BTreeMap;
use std::sync::Arc;

use ndarray::Array2;

use crate::backward::grad;
use crate::tensor::Tensor;

/// Named parameter values. Cheap to clone and safe to share across threads;
/// a thread binds its own graph leaves with [`ParamStore::bind`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    values: BTreeMap<String, Arc<Array2<f64>>>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Array2<f64>) {
        self.values.insert(name.into(), Arc::new(value));
    }

    pub fn get(&self, name: &str) -> Option<&Array2<f64>> {
        self.values.get(name).map(|v| v.as_ref())
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Array2<f64>> {
        self.values.get_mut(name).map(Arc::make_mut)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.values.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.values.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array2<f64>)> {
        self.values.iter().map(|(k, v)| (k.as_str(), v.as_ref()))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.values.values().map(|v| v.len()).sum()
    }

    /// Leaf tensors for one forward pass. `trainable` leaves accept gradients.
    pub fn bind(&self, trainable: bool) -> Vars {
        Vars {
            map: self
                .values
                .iter()
                .map(|(k, v)| (k.clone(), Tensor::from_shared(Arc::clone(v), trainable)))
                .collect(),
        }
    }

    /// Copies every entry of `other` in under `prefix`.
    pub fn merge_prefixed(&mut self, prefix: &str, other: &ParamStore) {
        for (k, v) in &other.values {
            self.values.insert(format!("{prefix}{k}"), Arc::clone(v));
        }
    }

    /// Entries whose name starts with `prefix`, with the prefix removed.
    pub fn extract_prefixed(&self, prefix: &str) -> ParamStore {
        ParamStore {
            values: self
                .values
                .iter()
                .filter_map(|(k, v)| k.strip_prefix(prefix).map(|s| (s.to_string(), Arc::clone(v))))
                .collect(),
        }
    }
}

/// Graph leaves bound from a [`ParamStore`].
pub struct Vars {
    map: BTreeMap<String, Tensor>,
}

impl Vars {
    pub fn get(&self, name: &str) -> &Tensor {
        self.map
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter `{name}`"))
    }

    pub fn try_get(&self, name: &str) -> Option<&Tensor> {
        self.map.get(name)
    }

    /// Gradients of `loss` for every bound parameter whose name starts with
    /// one of `prefixes` (all parameters when `prefixes` is empty).
    pub fn grads(&self, loss: &Tensor, prefixes: &[&str]) -> BTreeMap<String, Array2<f64>> {
        let selected: Vec<(&String, &Tensor)> = self
            .map
            .iter()
            .filter(|(k, _)| prefixes.is_empty() || prefixes.iter().any(|p| k.starts_with(p)))
            .collect();
        let wrt: Vec<&Tensor> = selected.iter().map(|(_, t)| *t).collect();
        let gs = grad(loss, &wrt, false);
        selected
            .into_iter()
            .zip(gs)
            .map(|((k, _), g)| (k.clone(), g.value().clone()))
            .collect()
    }
}
