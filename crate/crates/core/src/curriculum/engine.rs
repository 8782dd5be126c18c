//! The two-phase run: layer-wise IMP followed by LIFO regrowth.

use std::path::{Path, PathBuf};

use log::{debug, info};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::model::TransformerLm;
use crate::prune::{apply_mask, compute_scores, prune_layerwise, MaskSet, MaskStack};
use crate::rng::{RngStreams, StreamRng, REINIT};
use crate::snapshot::Snapshot;

use super::config::CurriculumConfig;
use super::record::{EpochRow, JsonlSink, Phase, RunRecord};
use super::schemes::{initialize_introduced, rewind, IntroductionAge, SnapshotStore};
use super::train::{train_epochs, CycleLog, EpochPlan, Learner, TrainData, TrainSettings};

type Observer<'a> = Box<dyn FnMut(&EpochRow, &Learner) + 'a>;

/// Outputs of the pruning phase.
#[derive(Debug, Clone)]
pub struct PruningOutcome {
    /// Mask after each cycle, strictly nested.
    pub masks: MaskStack,
    pub best_states: Vec<Snapshot>,
    pub final_states: Vec<Snapshot>,
}

/// Outputs of the growth phase, one entry per step.
#[derive(Debug, Clone)]
pub struct GrowthOutcome {
    pub best_states: Vec<Snapshot>,
    /// Global indices reintroduced at each step, ascending.
    pub introduced: Vec<Vec<usize>>,
    /// Active mask while training each step.
    pub active_masks: Vec<MaskSet>,
}

#[derive(Debug, Clone)]
pub struct CupOutcome {
    pub record: RunRecord,
    pub pruning: PruningOutcome,
    pub growth: GrowthOutcome,
}

/// One isolated curriculum run.
pub struct CupCurriculum<'a> {
    cfg: CurriculumConfig,
    settings: TrainSettings,
    data: &'a TrainData,
    learner: Learner,
    snapshots: SnapshotStore,
    record: RunRecord,
    ages: IntroductionAge,
    /// Pruning cycle (1-based) that removed each weight; 0 if never pruned.
    pruned_in: Vec<usize>,
    reinit_rng: StreamRng,
    epochs_done: usize,
    sink: Option<JsonlSink>,
    observer: Option<Observer<'a>>,
    checkpoint_dir: Option<PathBuf>,
    best_state: Option<(Snapshot, MaskSet)>,
}

impl<'a> CupCurriculum<'a> {
    /// Initializes the model for `seed` and captures its initial state.
    pub fn new(
        model: TransformerLm,
        seed: u64,
        data: &'a TrainData,
        cfg: CurriculumConfig,
        settings: TrainSettings,
    ) -> Result<Self> {
        cfg.validate()?;
        settings.validate()?;
        let learner = Learner::new(model, seed)?;
        let weights = learner.params.weight_count();
        let snapshots = SnapshotStore {
            theta_0: Some(Snapshot::capture(&learner.params, "initial", None)),
            ..SnapshotStore::default()
        };
        Ok(Self {
            cfg,
            settings,
            data,
            learner,
            snapshots,
            record: RunRecord::default(),
            ages: IntroductionAge::new(weights),
            pruned_in: vec![0; weights],
            reinit_rng: RngStreams::new(seed).stream(REINIT),
            epochs_done: 0,
            sink: None,
            observer: None,
            checkpoint_dir: None,
            best_state: None,
        })
    }

    /// Streams every epoch row to `path` as JSON lines.
    pub fn log_to(&mut self, path: &Path) -> Result<()> {
        self.sink = Some(JsonlSink::create(path)?);
        Ok(())
    }

    /// Writes checkpoints into `dir` at each phase boundary.
    pub fn checkpoint_to(&mut self, dir: impl Into<PathBuf>) {
        self.checkpoint_dir = Some(dir.into());
    }

    /// Calls `f` after every epoch with the row and the learner state.
    pub fn observe(&mut self, f: impl FnMut(&EpochRow, &Learner) + 'a) {
        self.observer = Some(Box::new(f));
    }

    pub fn config(&self) -> &CurriculumConfig {
        &self.cfg
    }

    pub fn learner(&self) -> &Learner {
        &self.learner
    }

    pub fn snapshots(&self) -> &SnapshotStore {
        &self.snapshots
    }

    pub fn record(&self) -> &RunRecord {
        &self.record
    }

    pub fn ages(&self) -> &IntroductionAge {
        &self.ages
    }

    pub fn pruned_in(&self) -> &[usize] {
        &self.pruned_in
    }

    /// Parameters and mask of the best validation epoch so far.
    pub fn best_state(&self) -> Option<&(Snapshot, MaskSet)> {
        self.best_state.as_ref()
    }

    pub fn run(mut self) -> Result<CupOutcome> {
        let pruning = self.run_pruning_phase()?;
        let growth = self.run_growth_phase(&pruning)?;
        Ok(CupOutcome {
            record: self.record,
            pruning,
            growth,
        })
    }

    pub fn run_pruning_phase(&mut self) -> Result<PruningOutcome> {
        let mut stack = MaskStack::new();
        let ones = vec![1.0; self.learner.params.weight_count()];
        for cycle in 1..=self.cfg.n {
            let plan = EpochPlan {
                phase: Phase::Prune,
                cycle,
                epochs: self.cfg.epochs(cycle),
                patience: self.cfg.cycle_patience(true),
                epochs_before: self.epochs_done,
            };
            let log = self.train(&plan, &ones)?;
            let last = Snapshot::capture(&self.learner.params, format!("last-{cycle}"), Some(cycle));
            let best = log.best.map(|b| b.state).unwrap_or_else(|| Snapshot {
                label: format!("best-{cycle}"),
                ..last.clone()
            });
            self.snapshots.best.push(best);
            self.snapshots.last.push(last);

            let scores = compute_scores(
                &self.learner.params,
                self.snapshots.theta_0.as_ref(),
                &self.learner.masks,
            )?;
            rewind(
                &mut self.learner.params,
                &self.learner.masks,
                self.cfg.rewinding,
                &self.snapshots,
                cycle,
            )?;
            let next = prune_layerwise(&self.learner.masks, &scores, self.cfg.prune_fraction)?;
            if let Some(l) = next.layers().iter().find(|l| l.active() == 0) {
                return Err(Error::CapacityUnderflow(format!(
                    "cycle {cycle} pruned every weight of `{}`",
                    l.name
                )));
            }
            for g in self.learner.masks.difference(&next)? {
                self.pruned_in[g] = cycle;
            }
            apply_mask(&mut self.learner.params, &next)?;
            stack.push(next.clone())?;
            self.learner.masks = next;
            info!(
                "seed {} cycle {cycle}: pruned to {:.2}% capacity",
                self.learner.seed,
                self.learner.capacity()
            );
        }
        self.save_checkpoint("pruning")?;
        Ok(PruningOutcome {
            masks: stack,
            best_states: self.snapshots.best.clone(),
            final_states: self.snapshots.last.clone(),
        })
    }

    pub fn run_growth_phase(&mut self, pruning: &PruningOutcome) -> Result<GrowthOutcome> {
        let full = MaskSet::full(&self.learner.params);
        let mut targets: Vec<&MaskSet> = pruning.masks.iter().rev().collect();
        if self.cfg.restore_full_capacity {
            targets.push(&full);
        }
        if self.cfg.m > targets.len() {
            return Err(Error::Config(format!(
                "{} growth steps requested but only {} targets exist",
                self.cfg.m,
                targets.len()
            )));
        }

        let mut out = GrowthOutcome {
            best_states: Vec::new(),
            introduced: Vec::new(),
            active_masks: Vec::new(),
        };
        for step in 1..=self.cfg.m {
            let target = targets[step - 1];
            target.check_aligned(&self.learner.params)?;
            if !self.learner.masks.is_subset_of(target) {
                return Err(Error::Invariant(format!(
                    "growth step {step}: target mask does not contain the active mask"
                )));
            }
            let introduce = target.difference(&self.learner.masks)?;
            initialize_introduced(
                &mut self.learner.params,
                &self.learner.masks,
                &introduce,
                self.cfg.initialization,
                &self.snapshots,
                &self.pruned_in,
                &mut self.reinit_rng,
            )?;
            for &g in &introduce {
                self.ages.set(g, step as u32);
            }
            self.learner.masks = target.clone();
            debug!("growth step {step}: introduced {} weights", introduce.len());

            let scales = self.ages.scales(step as u32, self.cfg.update, self.cfg.dynamic_factor);
            let plan = EpochPlan {
                phase: Phase::Grow,
                cycle: step,
                epochs: self.cfg.epochs(self.cfg.n + step),
                patience: self.cfg.cycle_patience(false),
                epochs_before: self.epochs_done,
            };
            let log = self.train(&plan, &scales)?;
            let best = log
                .best
                .map(|b| b.state)
                .unwrap_or_else(|| Snapshot::capture(&self.learner.params, format!("grow-{step}"), Some(step)));
            out.best_states.push(best);
            out.introduced.push(introduce);
            out.active_masks.push(self.learner.masks.clone());
        }
        self.save_checkpoint("growth")?;
        self.save_checkpoint("best")?;
        Ok(out)
    }

    fn train(&mut self, plan: &EpochPlan, scales: &[f64]) -> Result<CycleLog> {
        let Self {
            cfg,
            settings,
            data,
            learner,
            snapshots,
            record,
            sink,
            observer,
            best_state,
            ..
        } = self;
        let warmup = cfg.warmup_epochs;
        let mut hook = |row: &EpochRow, l: &Learner| -> Result<()> {
            if row.phase == Phase::Prune && row.cycle == 1 && row.epoch == warmup {
                snapshots.theta_warm = Some(Snapshot::capture(&l.params, "warm", Some(1)));
            }
            if record.push(row.clone()) {
                *best_state = Some((
                    Snapshot::capture(&l.params, "best-overall", Some(row.cycle)),
                    l.masks.clone(),
                ));
            }
            if let Some(s) = sink.as_mut() {
                s.append(row)?;
            }
            if let Some(f) = observer.as_mut() {
                f(row, l);
            }
            Ok(())
        };
        let log = train_epochs(learner, data, settings, plan, scales, &mut hook)?;
        self.epochs_done += log.rows.len();
        Ok(log)
    }

    fn save_checkpoint(&self, label: &str) -> Result<()> {
        let Some(dir) = &self.checkpoint_dir else {
            return Ok(());
        };
        let ckpt = if label == "best" {
            let Some((state, masks)) = &self.best_state else {
                return Ok(());
            };
            let mut params = self.learner.params.clone();
            state.restore(&mut params)?;
            Checkpoint::capture(
                label,
                self.learner.model.config(),
                self.learner.seed,
                &params,
                masks,
                &self.ages,
            )
        } else {
            Checkpoint::capture(
                label,
                self.learner.model.config(),
                self.learner.seed,
                &self.learner.params,
                &self.learner.masks,
                &self.ages,
            )
        };
        ckpt.save(&dir.join(format!("{label}.ckpt")))
    }
}
