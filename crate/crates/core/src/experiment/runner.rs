use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::curriculum::{
    train_epochs, CupCurriculum, EpochPlan, JsonlSink, Learner, Phase, RunRecord, Strategy, TrainData,
};
use crate::data::{batchify, Dataset};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, TransformerLm};
use crate::snapshot::Snapshot;

use super::spec::ExperimentSpec;

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunKind {
    Cup,
    EarlyStopping,
    Imp,
}

/// Outcome of one run, written next to its metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_id: String,
    pub kind: RunKind,
    pub strategy: Option<Strategy>,
    pub seed: u64,
    pub ok: bool,
    pub error: Option<String>,
    pub epochs: usize,
    pub best_val_loss: Option<f64>,
    /// Lowest validation loss of the pruning phase (cup and IMP runs).
    pub best_pruning_val: Option<f64>,
    /// Test loss of the best-validation parameters.
    pub test_loss: Option<f64>,
}

impl RunSummary {
    fn failed(run_id: String, kind: RunKind, strategy: Option<Strategy>, seed: u64, err: &Error) -> Self {
        Self {
            run_id,
            kind,
            strategy,
            seed,
            ok: false,
            error: Some(err.to_string()),
            epochs: 0,
            best_val_loss: None,
            best_pruning_val: None,
            test_loss: None,
        }
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(SUMMARY_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    fn save(&self, dir: &Path) -> Result<()> {
        let path = dir.join(SUMMARY_FILE);
        let text = serde_json::to_string_pretty(self)?;
        fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }
}

pub fn cup_run_id(strategy: Strategy, seed: u64) -> String {
    format!("cup-{}-s{seed}", strategy.label())
}

pub fn imp_run_id(seed: u64) -> String {
    format!("imp-s{seed}")
}

pub fn es_run_id(seed: u64) -> String {
    format!("es-s{seed}")
}

/// Loaded data and model shape shared read-only by every run of an experiment.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub spec: ExperimentSpec,
    pub dataset: Dataset,
    pub data: TrainData,
    pub model: ModelConfig,
}

/// Early-stopping baseline results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineResult {
    pub runs: Vec<RunSummary>,
    /// Lowest best-validation loss over the successful runs.
    pub best: Option<f64>,
}

impl BaselineResult {
    pub fn from_runs(runs: Vec<RunSummary>) -> Self {
        let best = runs.iter().filter_map(|r| r.best_val_loss).min_by(f64::total_cmp);
        Self { runs, best }
    }

    pub fn per_run_best(&self) -> Vec<f64> {
        self.runs.iter().filter_map(|r| r.best_val_loss).collect()
    }
}

impl Experiment {
    pub fn prepare(spec: ExperimentSpec) -> Result<Self> {
        spec.validate()?;
        let spec = spec.resolved();
        let dataset = spec.data.load()?;
        let data = TrainData::new(&dataset, &spec.train)?;
        let model = spec.model.config(dataset.vocab.len());
        model.validate()?;
        info!(
            "vocabulary {} tokens, {} training tokens, {} validation batches",
            dataset.vocab.len(),
            dataset.train.len(),
            data.valid.len()
        );
        Ok(Self {
            spec,
            dataset,
            data,
            model,
        })
    }

    fn lm(&self) -> Result<TransformerLm> {
        TransformerLm::new(self.model.clone())
    }

    fn run_dir(&self, out: Option<&Path>, run_id: &str) -> Result<Option<PathBuf>> {
        let Some(out) = out else { return Ok(None) };
        let dir = out.join(run_id);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(Some(dir))
    }

    fn test_loss(&self, learner: &Learner, state: Option<&Snapshot>) -> Result<Option<f64>> {
        let Ok(batches) = batchify(&self.dataset.test, self.data.batch_size, self.data.seq_len) else {
            return Ok(None);
        };
        let mut l = learner.clone();
        if let Some(s) = state {
            s.restore(&mut l.params)?;
        }
        l.evaluate(&batches).map(Some)
    }

    /// One full curriculum run. Errors inside the run become a failed
    /// summary rather than an `Err`.
    pub fn run_cup(&self, seed: u64, strategy: Strategy, out: Option<&Path>) -> Result<(RunSummary, RunRecord)> {
        let run_id = cup_run_id(strategy, seed);
        let dir = self.run_dir(out, &run_id)?;
        let cfg = self.spec.curriculum.clone().with_strategy(strategy);
        let attempt = || -> Result<(RunSummary, RunRecord)> {
            let mut run = CupCurriculum::new(self.lm()?, seed, &self.data, cfg, self.spec.train.clone())?;
            if let Some(d) = &dir {
                run.log_to(&d.join(METRICS_FILE))?;
                run.checkpoint_to(d.clone());
            }
            let pruning = run.run_pruning_phase()?;
            run.run_growth_phase(&pruning)?;
            let test_loss = match run.best_state() {
                Some((state, _)) => self.test_loss(run.learner(), Some(state))?,
                None => None,
            };
            let record = run.record().clone();
            let summary = RunSummary {
                run_id: run_id.clone(),
                kind: RunKind::Cup,
                strategy: Some(strategy),
                seed,
                ok: true,
                error: None,
                epochs: record.rows.len(),
                best_val_loss: record.best_val_loss(),
                best_pruning_val: record.best_in_phase(Phase::Prune),
                test_loss,
            };
            Ok((summary, record))
        };
        self.finish(attempt(), dir.as_deref(), || {
            (run_id.clone(), RunKind::Cup, Some(strategy), seed)
        })
    }

    /// Pruning phase only, with the experiment's curriculum settings.
    pub fn run_imp_baseline(&self, seed: u64, out: Option<&Path>) -> Result<(RunSummary, RunRecord)> {
        let run_id = imp_run_id(seed);
        let dir = self.run_dir(out, &run_id)?;
        let strategy = self.spec.curriculum.strategy();
        let attempt = || -> Result<(RunSummary, RunRecord)> {
            let mut run = CupCurriculum::new(
                self.lm()?,
                seed,
                &self.data,
                self.spec.curriculum.clone(),
                self.spec.train.clone(),
            )?;
            if let Some(d) = &dir {
                run.log_to(&d.join(METRICS_FILE))?;
            }
            run.run_pruning_phase()?;
            let test_loss = match run.best_state() {
                Some((state, _)) => self.test_loss(run.learner(), Some(state))?,
                None => None,
            };
            let record = run.record().clone();
            let summary = RunSummary {
                run_id: run_id.clone(),
                kind: RunKind::Imp,
                strategy: Some(strategy),
                seed,
                ok: true,
                error: None,
                epochs: record.rows.len(),
                best_val_loss: record.best_val_loss(),
                best_pruning_val: record.best_val_loss(),
                test_loss,
            };
            Ok((summary, record))
        };
        self.finish(attempt(), dir.as_deref(), || {
            (run_id.clone(), RunKind::Imp, Some(strategy), seed)
        })
    }

    /// One dense run with patience-based early stopping.
    pub fn run_dense(&self, seed: u64, out: Option<&Path>) -> Result<(RunSummary, RunRecord)> {
        let run_id = es_run_id(seed);
        let dir = self.run_dir(out, &run_id)?;
        let attempt = || -> Result<(RunSummary, RunRecord)> {
            let mut learner = Learner::new(self.lm()?, seed)?;
            let mut sink = match &dir {
                Some(d) => Some(JsonlSink::create(&d.join(METRICS_FILE))?),
                None => None,
            };
            let mut record = RunRecord::default();
            let mut best: Option<Snapshot> = None;
            let plan = EpochPlan {
                phase: Phase::Dense,
                cycle: 1,
                epochs: self.spec.baselines.max_epochs,
                patience: Some(self.spec.baselines.patience),
                epochs_before: 0,
            };
            let ones = vec![1.0; learner.params.weight_count()];
            let log = train_epochs(
                &mut learner,
                &self.data,
                &self.spec.train,
                &plan,
                &ones,
                &mut |row, _| {
                    record.push(row.clone());
                    match sink.as_mut() {
                        Some(s) => s.append(row),
                        None => Ok(()),
                    }
                },
            )?;
            if let Some(b) = log.best {
                best = Some(b.state);
            }
            let summary = RunSummary {
                run_id: run_id.clone(),
                kind: RunKind::EarlyStopping,
                strategy: None,
                seed,
                ok: true,
                error: None,
                epochs: record.rows.len(),
                best_val_loss: record.best_val_loss(),
                best_pruning_val: None,
                test_loss: self.test_loss(&learner, best.as_ref())?,
            };
            Ok((summary, record))
        };
        self.finish(attempt(), dir.as_deref(), || {
            (run_id.clone(), RunKind::EarlyStopping, None, seed)
        })
    }

    fn finish(
        &self,
        outcome: Result<(RunSummary, RunRecord)>,
        dir: Option<&Path>,
        ids: impl FnOnce() -> (String, RunKind, Option<Strategy>, u64),
    ) -> Result<(RunSummary, RunRecord)> {
        let (summary, record) = match outcome {
            Ok(done) => done,
            Err(e) => {
                let (run_id, kind, strategy, seed) = ids();
                warn!("run {run_id} failed: {e}");
                (
                    RunSummary::failed(run_id, kind, strategy, seed, &e),
                    RunRecord::default(),
                )
            }
        };
        if let Some(d) = dir {
            summary.save(d)?;
        }
        Ok((summary, record))
    }

    /// `K` independent dense runs, seeded `seed_offset + k`.
    pub fn run_early_stopping_baseline(&self, out: Option<&Path>, parallel: usize) -> Result<BaselineResult> {
        let b = &self.spec.baselines;
        let seeds: Vec<u64> = (0..b.early_stopping_runs as u64).map(|k| b.seed_offset + k).collect();
        let runs = run_parallel(&seeds, parallel, |&seed| self.run_dense(seed, out).map(|r| r.0))?;
        Ok(BaselineResult::from_runs(runs))
    }

    /// Cup runs for every strategy and seed, plus the early-stopping
    /// baseline, summarized into a comparison table.
    pub fn run_strategy_grid(
        &self,
        strategies: &[Strategy],
        out: Option<&Path>,
        parallel: usize,
    ) -> Result<GridOutcome> {
        if let Some(o) = out {
            self.spec.write_resolved(o)?;
        }
        let baseline = self.run_early_stopping_baseline(out, parallel)?;
        let jobs: Vec<(Strategy, u64)> = strategies
            .iter()
            .flat_map(|&s| self.spec.seeds.iter().map(move |&seed| (s, seed)))
            .collect();
        let runs = run_parallel(&jobs, parallel, |&(s, seed)| self.run_cup(seed, s, out).map(|r| r.0))?;
        let table = super::report::build_table(strategies, &runs, &baseline)?;
        if let Some(o) = out {
            super::report::write_table(&table, o)?;
        }
        Ok(GridOutcome { baseline, runs, table })
    }
}

#[derive(Debug, Clone)]
pub struct GridOutcome {
    pub baseline: BaselineResult,
    pub runs: Vec<RunSummary>,
    pub table: super::report::ComparisonTable,
}

/// Maps `f` over `jobs` on up to `parallel` threads, keeping input order.
/// Every job runs in its own context; there is no shared mutable state
/// besides the result slots.
pub fn run_parallel<J: Sync, T: Send>(
    jobs: &[J],
    parallel: usize,
    f: impl Fn(&J) -> Result<T> + Sync,
) -> Result<Vec<T>> {
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<T>>>> = Mutex::new((0..jobs.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..parallel.clamp(1, jobs.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= jobs.len() {
                    break;
                }
                let r = f(&jobs[i]);
                slots.lock().expect("result slots poisoned")[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .expect("result slots poisoned")
        .into_iter()
        .map(|r| r.expect("every job ran"))
        .collect()
}
