//! Full deep copies of model parameters.

use crate::error::Result;
use crate::param::ParamStore;

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub label: String,
    /// 1-based cycle (or growth step) the snapshot belongs to, if any.
    pub cycle: Option<usize>,
    pub values: Vec<Vec<f64>>,
}

impl Snapshot {
    pub fn capture(params: &ParamStore, label: impl Into<String>, cycle: Option<usize>) -> Self {
        Self {
            label: label.into(),
            cycle,
            values: params.values_snapshot(),
        }
    }

    pub fn restore(&self, params: &mut ParamStore) -> Result<()> {
        params.load_values(&self.values)
    }

    /// Value of the weight at `offset` inside parameter `param`.
    pub fn weight(&self, param: usize, offset: usize) -> f64 {
        self.values[param][offset]
    }
}
