//! Rewinding, reinitialization and update scaling.

use crate::error::{Error, Result};
use crate::param::ParamStore;
use crate::prune::{apply_mask, MaskSet};
use crate::rng::StreamRng;
use crate::snapshot::Snapshot;

use super::config::{Initialization, Rewinding, UpdateScheme};

/// Every state the schemes may need to look up.
#[derive(Debug, Clone, Default)]
pub struct SnapshotStore {
    pub theta_0: Option<Snapshot>,
    pub theta_warm: Option<Snapshot>,
    /// Best-validation state of pruning cycle `i` at index `i - 1`.
    pub best: Vec<Snapshot>,
    /// End-of-cycle state of pruning cycle `i` at index `i - 1`, taken
    /// before scoring and rewinding.
    pub last: Vec<Snapshot>,
}

impl SnapshotStore {
    pub fn best_of(&self, cycle: usize) -> Result<&Snapshot> {
        cycle
            .checked_sub(1)
            .and_then(|i| self.best.get(i))
            .ok_or_else(|| Error::State(format!("no best state recorded for cycle {cycle}")))
    }

    pub fn last_of(&self, cycle: usize) -> Result<&Snapshot> {
        cycle
            .checked_sub(1)
            .and_then(|i| self.last.get(i))
            .ok_or_else(|| Error::State(format!("no final state recorded for cycle {cycle}")))
    }

    pub fn initial(&self) -> Result<&Snapshot> {
        self.theta_0
            .as_ref()
            .ok_or_else(|| Error::State("initial state was never captured".into()))
    }

    pub fn warm(&self) -> Result<&Snapshot> {
        self.theta_warm
            .as_ref()
            .ok_or_else(|| Error::State("warm-up state requested before the warm-up epochs completed".into()))
    }
}

/// Growth step at which each weight was (re)introduced, indexed by the
/// store's global weight enumeration. Weights never pruned have age 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntroductionAge {
    ages: Vec<u32>,
}

impl IntroductionAge {
    pub fn new(weights: usize) -> Self {
        Self { ages: vec![0; weights] }
    }

    pub fn from_vec(ages: Vec<u32>) -> Self {
        Self { ages }
    }

    pub fn get(&self, global: usize) -> u32 {
        self.ages[global]
    }

    pub fn set(&mut self, global: usize, step: u32) {
        self.ages[global] = step;
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.ages
    }

    /// Per-weight SGD scale for growth step `step`.
    pub fn scales(&self, step: u32, scheme: UpdateScheme, f: f64) -> Vec<f64> {
        self.ages.iter().map(|&a| update_scale(a, step, scheme, f)).collect()
    }
}

/// Multiplier applied to the update of a weight introduced at `age` while
/// training growth step `current_step`.
pub fn update_scale(age: u32, current_step: u32, scheme: UpdateScheme, f: f64) -> f64 {
    debug_assert!(age <= current_step);
    match scheme {
        UpdateScheme::Freezing => {
            if age == current_step {
                1.0
            } else {
                0.0
            }
        }
        UpdateScheme::Identical => 1.0,
        UpdateScheme::Dynamic => f.powi(age as i32),
    }
}

/// Restores the state selected by `scheme` after pruning cycle `cycle`, then
/// re-zeroes everything `masks` marks inactive. Non-prunable tensors are
/// rewound the same way as weight matrices.
pub fn rewind(
    params: &mut ParamStore,
    masks: &MaskSet,
    scheme: Rewinding,
    snapshots: &SnapshotStore,
    cycle: usize,
) -> Result<()> {
    let target = match scheme {
        Rewinding::Initial => snapshots.initial()?,
        Rewinding::Warm => snapshots.warm()?,
        Rewinding::Best => snapshots.best_of(cycle)?,
        Rewinding::No => return Ok(()),
    };
    target.restore(params)?;
    apply_mask(params, masks)
}

/// Gives each weight in `indices` its starting value under `scheme`.
///
/// `pruned_in[g]` is the 1-based pruning cycle that removed weight `g` (0 if
/// it was never pruned). Random draws are consumed in ascending index order.
pub fn initialize_introduced(
    params: &mut ParamStore,
    masks: &MaskSet,
    indices: &[usize],
    scheme: Initialization,
    snapshots: &SnapshotStore,
    pruned_in: &[usize],
    rng: &mut StreamRng,
) -> Result<()> {
    let active = masks.flat(params);
    let mut order = indices.to_vec();
    order.sort_unstable();
    for g in order {
        let (id, off) = params.locate(g)?;
        if active[g] {
            return Err(Error::Invariant(format!(
                "weight {g} of `{}` is already active",
                params.get(id).name
            )));
        }
        let cycle = pruned_in.get(g).copied().unwrap_or(0);
        if cycle == 0 {
            return Err(Error::Invariant(format!("weight {g} has no recorded pruning cycle")));
        }
        let value = match scheme {
            Initialization::Original => snapshots.initial()?.weight(id, off),
            Initialization::Random => params.get(id).init.sample(rng),
            Initialization::Old => snapshots.last_of(cycle)?.weight(id, off),
            Initialization::Top => snapshots.best_of(cycle)?.weight(id, off),
        };
        params.get_mut(id).tensor.values_mut()[off] = value;
    }
    Ok(())
}
