//! Named parameter tensors and their checkpoint form.

use std::collections::HashMap;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }

    pub(crate) fn from_index(i: usize) -> Self {
        ParamId(i)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Array2<f64>>,
    decay: Vec<bool>,
    by_name: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a tensor. `decay` marks it as subject to weight decay.
    pub fn add(&mut self, name: &str, value: Array2<f64>, decay: bool) -> ParamId {
        assert!(!self.by_name.contains_key(name), "duplicate parameter {name}");
        let id = ParamId(self.names.len());
        self.names.push(name.to_string());
        self.values.push(value);
        self.decay.push(decay);
        self.by_name.insert(name.to_string(), id);
        id
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    /// Looks up a tensor and checks its shape.
    pub fn expect(&self, name: &str, shape: (usize, usize)) -> Result<ParamId> {
        let id = self
            .id(name)
            .ok_or_else(|| Error::Validation(format!("missing tensor `{name}`")))?;
        let dim = self.value(id).dim();
        if dim != shape {
            return Err(Error::Shape(format!(
                "tensor `{name}` is {dim:?}, expected {shape:?}"
            )));
        }
        Ok(id)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Array2<f64> {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Array2<f64> {
        &mut self.values[id.0]
    }

    pub fn decays(&self, id: ParamId) -> bool {
        self.decay[id.0]
    }

    pub fn n_scalars(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.iter().all(|x| x.is_finite()))
    }

    pub fn to_tensors(&self) -> Vec<NamedTensor> {
        self.ids()
            .map(|id| {
                let v = self.value(id);
                NamedTensor {
                    name: self.name(id).to_string(),
                    shape: [v.nrows(), v.ncols()],
                    decay: self.decays(id),
                    data: v.iter().copied().collect(),
                }
            })
            .collect()
    }

    pub fn from_tensors(tensors: Vec<NamedTensor>) -> Result<Self> {
        let mut store = ParamStore::new();
        for t in tensors {
            if store.id(&t.name).is_some() {
                return Err(Error::Validation(format!("duplicate tensor `{}`", t.name)));
            }
            let value = Array2::from_shape_vec((t.shape[0], t.shape[1]), t.data).map_err(|_| {
                Error::Shape(format!("tensor `{}` does not match shape {:?}", t.name, t.shape))
            })?;
            store.add(&t.name, value, t.decay);
        }
        Ok(store)
    }

    /// Overwrites values from another store with the same layout.
    pub fn copy_from(&mut self, other: &ParamStore) {
        assert_eq!(self.names, other.names);
        for (dst, src) in self.values.iter_mut().zip(&other.values) {
            dst.assign(src);
        }
    }
}

/// Row-major tensor with its name and `[rows, cols]` shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: [usize; 2],
    pub decay: bool,
    pub data: Vec<f64>,
}

/// Glorot-uniform matrix.
pub fn xavier(rng: &mut impl Rng, rows: usize, cols: usize) -> Array2<f64> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    uniform(rng, rows, cols, limit)
}

pub fn uniform(rng: &mut impl Rng, rows: usize, cols: usize, limit: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-limit..limit))
}
