//! Layer-wise magnitude-change pruning and mask bookkeeping.

use log::warn;

use crate::error::{Error, Result};
use crate::param::ParamStore;
use crate::snapshot::Snapshot;

/// Score of one surviving weight: `criterion = |current| - |initial|`.
/// Weights whose magnitude grew least during training score lowest.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PruneScore {
    pub weight_index: usize,
    pub current: f64,
    pub initial: f64,
    pub criterion: f64,
}

impl PruneScore {
    pub fn new(weight_index: usize, current: f64, initial: f64) -> Self {
        Self {
            weight_index,
            current,
            initial,
            criterion: current.abs() - initial.abs(),
        }
    }
}

/// Keep-mask for one prunable tensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerMask {
    pub param: usize,
    pub name: String,
    /// Global index of the tensor's first weight.
    pub base: usize,
    pub keep: Vec<bool>,
}

impl LayerMask {
    pub fn active(&self) -> usize {
        self.keep.iter().filter(|&&k| k).count()
    }
}

/// Masks for every prunable tensor of a store, in registration order.
/// Non-prunable tensors are implicitly fully active.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskSet {
    layers: Vec<LayerMask>,
}

impl MaskSet {
    /// All-ones mask over the store's prunable tensors.
    pub fn full(params: &ParamStore) -> Self {
        let layers = params
            .prunable_ids()
            .map(|id| {
                let p = params.get(id);
                LayerMask {
                    param: id,
                    name: p.name.clone(),
                    base: p.base,
                    keep: vec![true; p.tensor.len()],
                }
            })
            .collect();
        Self { layers }
    }

    pub fn from_layers(layers: Vec<LayerMask>) -> Self {
        Self { layers }
    }

    pub fn layers(&self) -> &[LayerMask] {
        &self.layers
    }

    pub fn active_count(&self) -> usize {
        self.layers.iter().map(LayerMask::active).sum()
    }

    pub fn total_count(&self) -> usize {
        self.layers.iter().map(|l| l.keep.len()).sum()
    }

    /// Percentage of prunable weights still active.
    pub fn capacity(&self) -> f64 {
        let total = self.total_count();
        if total == 0 {
            return 100.0;
        }
        100.0 * self.active_count() as f64 / total as f64
    }

    /// Global indices of active prunable weights, ascending.
    pub fn support(&self) -> Vec<usize> {
        self.layers
            .iter()
            .flat_map(|l| {
                l.keep
                    .iter()
                    .enumerate()
                    .filter(|(_, &k)| k)
                    .map(move |(j, _)| l.base + j)
            })
            .collect()
    }

    /// Weights active in `self` but not in `other`, ascending.
    pub fn difference(&self, other: &MaskSet) -> Result<Vec<usize>> {
        self.check_same_layout(other)?;
        Ok(self
            .layers
            .iter()
            .zip(&other.layers)
            .flat_map(|(a, b)| {
                a.keep
                    .iter()
                    .zip(&b.keep)
                    .enumerate()
                    .filter(|(_, (&x, &y))| x && !y)
                    .map(move |(j, _)| a.base + j)
            })
            .collect())
    }

    pub fn is_subset_of(&self, other: &MaskSet) -> bool {
        self.check_same_layout(other).is_ok()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.keep.iter().zip(&b.keep).all(|(&x, &y)| !x || y))
    }

    pub fn is_strict_subset_of(&self, other: &MaskSet) -> bool {
        self.is_subset_of(other) && self.active_count() < other.active_count()
    }

    /// Per-weight activity over the store's whole global enumeration.
    pub fn flat(&self, params: &ParamStore) -> Vec<bool> {
        let mut flat = vec![true; params.weight_count()];
        for l in &self.layers {
            flat[l.base..l.base + l.keep.len()].copy_from_slice(&l.keep);
        }
        flat
    }

    pub fn set_active(&mut self, global: usize, active: bool) -> Result<()> {
        let layer = self
            .layers
            .iter_mut()
            .find(|l| (l.base..l.base + l.keep.len()).contains(&global))
            .ok_or_else(|| Error::Index(format!("weight {global} is not prunable")))?;
        layer.keep[global - layer.base] = active;
        Ok(())
    }

    pub fn check_aligned(&self, params: &ParamStore) -> Result<()> {
        let expected: Vec<usize> = params.prunable_ids().collect();
        let actual: Vec<usize> = self.layers.iter().map(|l| l.param).collect();
        if expected != actual {
            return Err(Error::Invariant("mask layers do not match prunable parameters".into()));
        }
        for l in &self.layers {
            let p = params.get(l.param);
            if p.base != l.base || p.tensor.len() != l.keep.len() {
                return Err(Error::Invariant(format!("mask for `{}` is misaligned", l.name)));
            }
        }
        Ok(())
    }

    fn check_same_layout(&self, other: &MaskSet) -> Result<()> {
        let same = self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.param == b.param && a.base == b.base && a.keep.len() == b.keep.len());
        if same {
            Ok(())
        } else {
            Err(Error::Invariant("mask sets cover different tensors".into()))
        }
    }
}

/// Masks recorded after each completed pruning cycle. Supports shrink
/// strictly from one entry to the next.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MaskStack {
    masks: Vec<MaskSet>,
}

impl MaskStack {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, mask: MaskSet) -> Result<()> {
        if let Some(prev) = self.masks.last() {
            if !mask.is_strict_subset_of(prev) {
                return Err(Error::Invariant(format!(
                    "mask {} is not strictly nested in its predecessor",
                    self.masks.len() + 1
                )));
            }
        }
        self.masks.push(mask);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }

    /// Mask after pruning cycle `cycle` (1-based).
    pub fn after_cycle(&self, cycle: usize) -> Option<&MaskSet> {
        cycle.checked_sub(1).and_then(|i| self.masks.get(i))
    }

    pub fn iter(&self) -> impl DoubleEndedIterator<Item = &MaskSet> {
        self.masks.iter()
    }

    pub fn last(&self) -> Option<&MaskSet> {
        self.masks.last()
    }
}

/// One score per currently active prunable weight, ascending by index.
pub fn compute_scores(current: &ParamStore, initial: Option<&Snapshot>, masks: &MaskSet) -> Result<Vec<PruneScore>> {
    let initial = initial.ok_or_else(|| Error::State("no initial snapshot to score against".into()))?;
    masks.check_aligned(current)?;
    let mut scores = Vec::with_capacity(masks.active_count());
    for l in masks.layers() {
        let now = current.get(l.param).tensor.values();
        let init = initial
            .values
            .get(l.param)
            .filter(|v| v.len() == now.len())
            .ok_or_else(|| Error::Invariant(format!("initial snapshot lacks `{}`", l.name)))?;
        for (j, _) in l.keep.iter().enumerate().filter(|(_, &k)| k) {
            scores.push(PruneScore::new(l.base + j, now[j], init[j]));
        }
    }
    Ok(scores)
}

/// Number of weights a cycle removes from a tensor with `unpruned` active
/// weights: `fraction * unpruned`, rounded half-to-even.
pub fn prune_count(unpruned: usize, fraction: f64) -> usize {
    ((fraction * unpruned as f64).round_ties_even() as usize).min(unpruned)
}

/// Within each tensor independently, deactivates the `prune_count` active
/// weights with the lowest criterion (ties broken by lower global index).
pub fn prune_layerwise(masks: &MaskSet, scores: &[PruneScore], fraction: f64) -> Result<MaskSet> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!("prune fraction {fraction} outside (0, 1)")));
    }
    let mut next = masks.clone();
    for layer in &mut next.layers {
        let range = layer.base..layer.base + layer.keep.len();
        let mut layer_scores: Vec<&PruneScore> = scores.iter().filter(|s| range.contains(&s.weight_index)).collect();
        let unpruned = layer.active();
        if unpruned == 0 {
            warn!("tensor `{}` has no unpruned weights; skipping", layer.name);
            continue;
        }
        if layer_scores.len() != unpruned || layer_scores.iter().any(|s| !layer.keep[s.weight_index - layer.base]) {
            return Err(Error::Invariant(format!(
                "scores for `{}` do not cover exactly its {unpruned} unpruned weights",
                layer.name
            )));
        }
        layer_scores.sort_by(|a, b| {
            a.criterion
                .total_cmp(&b.criterion)
                .then(a.weight_index.cmp(&b.weight_index))
        });
        for s in layer_scores.iter().take(prune_count(unpruned, fraction)) {
            layer.keep[s.weight_index - layer.base] = false;
        }
    }
    Ok(next)
}

/// Percentage of prunable weights still active.
pub fn capacity(masks: &MaskSet) -> f64 {
    masks.capacity()
}

/// Sets every inactive weight to exactly zero.
pub fn apply_mask(params: &mut ParamStore, masks: &MaskSet) -> Result<()> {
    masks.check_aligned(params)?;
    for l in masks.layers() {
        let values = params.get_mut(l.param).tensor.values_mut();
        for (v, &keep) in values.iter_mut().zip(&l.keep) {
            if !keep {
                *v = 0.0;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::param::InitDist;
    use crate::tensor::Tensor;

    fn store(values: Vec<f64>) -> ParamStore {
        let mut s = ParamStore::new();
        s.register("dense", Tensor::zeros(vec![3]), false, InitDist::Zeros)
            .unwrap();
        let n = values.len();
        s.register("w", Tensor::new(vec![n], values).unwrap(), true, InitDist::Zeros)
            .unwrap();
        s
    }

    #[test]
    fn criterion_examples() {
        assert_eq!(PruneScore::new(0, 0.5, 0.5).criterion, 0.0);
        assert!((PruneScore::new(0, -0.9, 0.1).criterion - 0.8).abs() < 1e-15);
    }

    #[test]
    fn ten_weights_twenty_percent_prunes_two() {
        let s = store((0..10).map(f64::from).collect());
        let init = Snapshot::capture(&store(vec![0.0; 10]), "init", None);
        let m = MaskSet::full(&s);
        let scores = compute_scores(&s, Some(&init), &m).unwrap();
        let next = prune_layerwise(&m, &scores, 0.2).unwrap();
        assert_eq!(next.active_count(), 8);
        // lowest criteria are weights 0 and 1 of the tensor
        assert!(!next.layers()[0].keep[0] && !next.layers()[0].keep[1]);
        assert!((capacity(&next) - 80.0).abs() < 1e-12);
    }

    #[test]
    fn equal_criteria_prune_lowest_index() {
        let s = store(vec![1.0; 10]);
        let init = Snapshot::capture(&s, "init", None);
        let m = MaskSet::full(&s);
        let scores = compute_scores(&s, Some(&init), &m).unwrap();
        let next = prune_layerwise(&m, &scores, 0.3).unwrap();
        assert_eq!(&next.layers()[0].keep[..4], &[false, false, false, true]);
    }

    #[test]
    fn missing_snapshot_is_state_error() {
        let s = store(vec![1.0; 4]);
        let m = MaskSet::full(&s);
        assert!(matches!(compute_scores(&s, None, &m), Err(Error::State(_))));
    }

    #[test]
    fn empty_layer_is_skipped() {
        let s = store(vec![1.0; 3]);
        let mut m = MaskSet::full(&s);
        for g in 3..6 {
            m.set_active(g, false).unwrap();
        }
        let next = prune_layerwise(&m, &[], 0.2).unwrap();
        assert_eq!(next, m);
    }

    #[test]
    fn round_half_even_counts() {
        assert_eq!(prune_count(10, 0.2), 2);
        assert_eq!(prune_count(5, 0.5), 2); // 2.5 -> 2
        assert_eq!(prune_count(7, 0.5), 4); // 3.5 -> 4
        assert_eq!(prune_count(0, 0.2), 0);
    }

    #[test]
    fn apply_mask_zeroes_and_is_idempotent() {
        let mut s = store(vec![1.0, 2.0, 3.0]);
        let mut m = MaskSet::full(&s);
        m.set_active(4, false).unwrap();
        apply_mask(&mut s, &m).unwrap();
        let once = s.values_snapshot();
        apply_mask(&mut s, &m).unwrap();
        assert_eq!(once, s.values_snapshot());
        assert_eq!(s.get(1).tensor.values(), &[1.0, 0.0, 3.0]);
    }

    #[test]
    fn stack_rejects_non_nested() {
        let s = store(vec![1.0; 4]);
        let full = MaskSet::full(&s);
        let mut stack = MaskStack::new();
        stack.push(full.clone()).unwrap();
        assert!(stack.push(full.clone()).is_err());
        let mut smaller = full.clone();
        smaller.set_active(3, false).unwrap();
        stack.push(smaller.clone()).unwrap();
        let mut other = full;
        other.set_active(4, false).unwrap();
        other.set_active(5, false).unwrap();
        assert!(stack.push(other).is_err());
    }
}
