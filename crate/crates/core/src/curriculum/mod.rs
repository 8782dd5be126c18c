//! Pruning phase, growth phase and the scheme families that parameterize
//! them.

mod config;
mod engine;
mod record;
mod schemes;
mod train;

pub use config::{CurriculumConfig, Initialization, Rewinding, Strategy, UpdateScheme};
pub use engine::{CupCurriculum, CupOutcome, GrowthOutcome, PruningOutcome};
pub use record::{BestPoint, EpochRow, JsonlSink, Phase, RunRecord};
pub use schemes::{initialize_introduced, rewind, update_scale, IntroductionAge, SnapshotStore};
pub use train::{train_epochs, BestEpoch, CycleLog, EarlyStopping, EpochPlan, Learner, TrainData, TrainSettings};
