//! Named parameter tensors with a stable global weight enumeration.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Distribution a parameter was drawn from at initialization. Kept with the
/// parameter so reintroduced weights can be re-drawn from the same law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitDist {
    Zeros,
    Ones,
    Uniform { bound: f64 },
}

impl InitDist {
    pub fn sample<R: rand::Rng>(&self, rng: &mut R) -> f64 {
        match *self {
            InitDist::Zeros => 0.0,
            InitDist::Ones => 1.0,
            InitDist::Uniform { bound } => rng.random_range(-bound..=bound),
        }
    }

    /// Cumulative distribution function, used for goodness-of-fit checks.
    pub fn cdf(&self, x: f64) -> f64 {
        match *self {
            InitDist::Zeros => f64::from(u8::from(x >= 0.0)),
            InitDist::Ones => f64::from(u8::from(x >= 1.0)),
            InitDist::Uniform { bound } => ((x + bound) / (2.0 * bound)).clamp(0.0, 1.0),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub tensor: Tensor,
    pub prunable: bool,
    pub init: InitDist,
    /// Global index of this tensor's first element.
    pub base: usize,
}

/// Ordered collection of parameters. Registration order fixes the global
/// weight enumeration, so identical model configs always index identically.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Param>,
    by_name: HashMap<String, usize>,
    total: usize,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(
        &mut self,
        name: impl Into<String>,
        tensor: Tensor,
        prunable: bool,
        init: InitDist,
    ) -> Result<usize> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name `{name}`")));
        }
        let id = self.params.len();
        let base = self.total;
        self.total += tensor.len();
        self.by_name.insert(name.clone(), id);
        self.params.push(Param {
            name,
            tensor,
            prunable,
            init,
            base,
        });
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total scalar weight count over all parameters.
    pub fn weight_count(&self) -> usize {
        self.total
    }

    pub fn prunable_weight_count(&self) -> usize {
        self.params.iter().filter(|p| p.prunable).map(|p| p.tensor.len()).sum()
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.by_name
            .get(name)
            .copied()
            .ok_or_else(|| Error::Index(format!("no parameter named `{name}`")))
    }

    pub fn get(&self, id: usize) -> &Param {
        &self.params[id]
    }

    pub fn get_mut(&mut self, id: usize) -> &mut Param {
        &mut self.params[id]
    }

    pub fn by_name(&self, name: &str) -> Result<&Param> {
        Ok(&self.params[self.index_of(name)?])
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn prunable_ids(&self) -> impl Iterator<Item = usize> + '_ {
        self.params
            .iter()
            .enumerate()
            .filter(|(_, p)| p.prunable)
            .map(|(i, _)| i)
    }

    /// Maps a global weight index back to `(param id, offset)`.
    pub fn locate(&self, global: usize) -> Result<(usize, usize)> {
        if global >= self.total {
            return Err(Error::Index(format!(
                "weight index {global} out of range ({} weights)",
                self.total
            )));
        }
        let id = self.params.partition_point(|p| p.base <= global) - 1;
        Ok((id, global - self.params[id].base))
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.tensor.zero_grad();
        }
    }

    /// Deep copy of every parameter's values in registration order.
    pub fn values_snapshot(&self) -> Vec<Vec<f64>> {
        self.params.iter().map(|p| p.tensor.values().to_vec()).collect()
    }

    pub fn load_values(&mut self, values: &[Vec<f64>]) -> Result<()> {
        if values.len() != self.params.len() {
            return Err(Error::Invariant(format!(
                "snapshot has {} tensors, store has {}",
                values.len(),
                self.params.len()
            )));
        }
        for (p, v) in self.params.iter_mut().zip(values) {
            if v.len() != p.tensor.len() {
                return Err(Error::Invariant(format!("snapshot length mismatch for `{}`", p.name)));
            }
            p.tensor.values_mut().copy_from_slice(v);
        }
        Ok(())
    }
}
