//! The inner training loop shared by both phases and the baselines.

use serde::{Deserialize, Serialize};

use crate::data::{batchify, shuffled_batches, Dataset, TokenStream};
use crate::error::{Error, Result};
use crate::model::{Batch, TransformerLm};
use crate::optim::{clip_grad_norm, mask_grads, sgd_step, LrSchedule};
use crate::param::ParamStore;
use crate::prune::MaskSet;
use crate::rng::{RngStreams, StreamRng, DROPOUT, SHUFFLE};
use crate::snapshot::Snapshot;

use super::record::{EpochRow, Phase};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub batch_size: usize,
    pub seq_len: usize,
    pub lr: LrSchedule,
    /// Maximum global gradient norm; 0 disables clipping.
    pub grad_clip: f64,
    /// Visit training windows in a fresh random order every epoch.
    pub shuffle: bool,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            batch_size: 16,
            seq_len: 32,
            lr: LrSchedule::default(),
            grad_clip: 0.5,
            shuffle: true,
        }
    }
}

impl TrainSettings {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.seq_len == 0 {
            return Err(Error::Config("batch_size and seq_len must be positive".into()));
        }
        if !(self.grad_clip >= 0.0) {
            return Err(Error::Config(format!("grad_clip {} must be >= 0", self.grad_clip)));
        }
        self.lr.validate()
    }
}

/// Training stream plus fixed validation batches.
#[derive(Debug, Clone)]
pub struct TrainData {
    pub train: TokenStream,
    pub valid: Vec<Batch>,
    pub batch_size: usize,
    pub seq_len: usize,
}

impl TrainData {
    pub fn new(dataset: &Dataset, settings: &TrainSettings) -> Result<Self> {
        let (b, s) = (settings.batch_size, settings.seq_len);
        batchify(&dataset.train, b, s)?;
        Ok(Self {
            train: dataset.train.clone(),
            valid: batchify(&dataset.valid, b, s)?,
            batch_size: b,
            seq_len: s,
        })
    }
}

/// Model, parameters, masks and the run's stochastic streams.
#[derive(Debug, Clone)]
pub struct Learner {
    pub model: TransformerLm,
    pub params: ParamStore,
    pub masks: MaskSet,
    pub seed: u64,
    dropout_rng: StreamRng,
    shuffle_rng: StreamRng,
}

impl Learner {
    pub fn new(model: TransformerLm, seed: u64) -> Result<Self> {
        let params = model.init_params(seed)?;
        let masks = MaskSet::full(&params);
        let streams = RngStreams::new(seed);
        Ok(Self {
            model,
            params,
            masks,
            seed,
            dropout_rng: streams.stream(DROPOUT),
            shuffle_rng: streams.stream(SHUFFLE),
        })
    }

    pub fn capacity(&self) -> f64 {
        self.masks.capacity()
    }

    /// Mean eval-mode loss over `batches`.
    pub fn evaluate(&self, batches: &[Batch]) -> Result<f64> {
        if batches.is_empty() {
            return Err(Error::Input("no batches to evaluate".into()));
        }
        let mut total = 0.0;
        for b in batches {
            total += self.model.eval_loss(&self.params, b)?;
        }
        Ok(total / batches.len() as f64)
    }
}

/// Patience-based stopping on a sequence of validation losses.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    since_best: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            since_best: 0,
        }
    }

    /// Feeds one epoch's loss; true once `patience` epochs have passed
    /// without a strict improvement.
    pub fn should_stop(&mut self, loss: f64) -> bool {
        if loss < self.best {
            self.best = loss;
            self.since_best = 0;
        } else {
            self.since_best += 1;
        }
        self.since_best >= self.patience
    }
}

/// What one call to [`train_epochs`] should do.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochPlan {
    pub phase: Phase,
    pub cycle: usize,
    pub epochs: usize,
    pub patience: Option<usize>,
    /// Epochs already completed in the run.
    pub epochs_before: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BestEpoch {
    pub epoch: usize,
    pub val_loss: f64,
    pub state: Snapshot,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CycleLog {
    pub rows: Vec<EpochRow>,
    pub best: Option<BestEpoch>,
}

/// Runs up to `plan.epochs` epochs of masked, per-weight-scaled SGD,
/// validating after each. `on_epoch` sees every row together with the
/// learner state right after that epoch.
pub fn train_epochs(
    learner: &mut Learner,
    data: &TrainData,
    settings: &TrainSettings,
    plan: &EpochPlan,
    scales: &[f64],
    on_epoch: &mut dyn FnMut(&EpochRow, &Learner) -> Result<()>,
) -> Result<CycleLog> {
    let mask = learner.masks.flat(&learner.params);
    let capacity = learner.capacity();
    let mut stopper = plan.patience.map(EarlyStopping::new);
    let mut log = CycleLog::default();

    for e in 0..plan.epochs {
        let global_epoch = plan.epochs_before + e + 1;
        let lr = settings.lr.lr(e, global_epoch - 1);
        let batches = if settings.shuffle {
            shuffled_batches(&data.train, data.batch_size, data.seq_len, &mut learner.shuffle_rng)?
        } else {
            batchify(&data.train, data.batch_size, data.seq_len)?
        };

        let mut train_total = 0.0;
        for batch in &batches {
            learner.params.zero_grad();
            let loss = learner
                .model
                .train_loss_and_grad(&mut learner.params, batch, &mut learner.dropout_rng)?;
            if !loss.is_finite() {
                return Err(diverged(plan, e, loss));
            }
            train_total += loss;
            mask_grads(&mut learner.params, &mask);
            if settings.grad_clip > 0.0 {
                clip_grad_norm(&mut learner.params, settings.grad_clip);
            }
            sgd_step(&mut learner.params, lr, scales, &mask)?;
        }
        let val_loss = learner.evaluate(&data.valid)?;
        if !val_loss.is_finite() {
            return Err(diverged(plan, e, val_loss));
        }

        let row = EpochRow {
            phase: plan.phase,
            cycle: plan.cycle,
            epoch: e + 1,
            global_epoch,
            lr,
            train_loss: train_total / batches.len() as f64,
            val_loss,
            capacity_pct: capacity,
            seed: learner.seed,
        };
        if log.best.as_ref().is_none_or(|b| val_loss < b.val_loss) {
            log.best = Some(BestEpoch {
                epoch: e + 1,
                val_loss,
                state: Snapshot::capture(&learner.params, format!("best-{}", plan.cycle), Some(plan.cycle)),
            });
        }
        on_epoch(&row, learner)?;
        log.rows.push(row);
        if stopper.as_mut().is_some_and(|s| s.should_stop(val_loss)) {
            break;
        }
    }
    Ok(log)
}

fn diverged(plan: &EpochPlan, epoch: usize, loss: f64) -> Error {
    Error::Diverged {
        phase: format!("{:?}", plan.phase).to_lowercase(),
        cycle: plan.cycle,
        epoch: epoch + 1,
        loss,
    }
}
