//! Plain SGD with per-weight update scaling and masking.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::param::ParamStore;

/// `w <- w - lr * scale[w] * grad[w]` for every active weight. Inactive
/// weights (`mask[w] == false`) are forced to exactly zero and never move.
/// Both arrays are indexed by the store's global weight enumeration.
pub fn sgd_step(params: &mut ParamStore, lr: f64, scale: &[f64], mask: &[bool]) -> Result<()> {
    let total = params.weight_count();
    if scale.len() != total || mask.len() != total {
        return Err(Error::Invariant(format!(
            "sgd_step: scale has {} entries, mask {}, store {total}",
            scale.len(),
            mask.len()
        )));
    }
    for p in params.iter_mut() {
        let base = p.base;
        let n = p.tensor.len();
        let (values, grad) = p.tensor.values_and_grad_mut();
        let scale = &scale[base..base + n];
        let mask = &mask[base..base + n];
        for j in 0..n {
            if mask[j] {
                values[j] -= lr * scale[j] * grad[j];
            } else {
                values[j] = 0.0;
            }
        }
    }
    Ok(())
}

/// Zeroes the gradient of every inactive weight.
pub fn mask_grads(params: &mut ParamStore, mask: &[bool]) {
    for p in params.iter_mut() {
        let base = p.base;
        let n = p.tensor.len();
        let grad = p.tensor.grad_mut();
        for (g, &keep) in grad.iter_mut().zip(&mask[base..base + n]) {
            if !keep {
                *g = 0.0;
            }
        }
    }
}

/// Rescales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(params: &mut ParamStore, max_norm: f64) -> f64 {
    let norm = params
        .iter()
        .filter_map(|p| p.tensor.grad())
        .flat_map(|g| g.iter())
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let factor = max_norm / norm;
        for p in params.iter_mut() {
            p.tensor.grad_mut().iter_mut().for_each(|g| *g *= factor);
        }
    }
    norm
}

/// Whether the learning-rate decay restarts at each cycle boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LrReset {
    #[default]
    PerCycle,
    Continue,
}

/// Exponential per-epoch decay: `lr(e) = initial * decay^e`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LrSchedule {
    pub initial: f64,
    pub decay: f64,
    pub reset: LrReset,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self {
            initial: 5.0,
            decay: 0.95,
            reset: LrReset::PerCycle,
        }
    }
}

impl LrSchedule {
    /// Learning rate for an epoch, given its 0-based position within the
    /// current cycle and within the whole run.
    pub fn lr(&self, epoch_in_cycle: usize, epoch_global: usize) -> f64 {
        let e = match self.reset {
            LrReset::PerCycle => epoch_in_cycle,
            LrReset::Continue => epoch_global,
        };
        self.initial * self.decay.powi(e as i32)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.initial > 0.0) || !(self.decay > 0.0) {
            return Err(Error::Config(format!(
                "learning rate {} and decay {} must be positive",
                self.initial, self.decay
            )));
        }
        Ok(())
    }
}
