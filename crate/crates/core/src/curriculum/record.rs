//! Per-epoch metric rows and their JSON-lines sink.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// Dense training without a curriculum (early-stopping baseline).
    Dense,
    Prune,
    Grow,
}

/// One epoch of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    pub phase: Phase,
    /// 1-based pruning cycle or growth step.
    pub cycle: usize,
    /// 1-based epoch within the cycle.
    pub epoch: usize,
    /// 1-based epoch over the whole run.
    pub global_epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
    pub capacity_pct: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BestPoint {
    pub val_loss: f64,
    pub phase: Phase,
    pub cycle: usize,
    pub epoch: usize,
    pub global_epoch: usize,
    pub capacity_pct: f64,
}

impl BestPoint {
    fn of(row: &EpochRow) -> Self {
        Self {
            val_loss: row.val_loss,
            phase: row.phase,
            cycle: row.cycle,
            epoch: row.epoch,
            global_epoch: row.global_epoch,
            capacity_pct: row.capacity_pct,
        }
    }
}

/// All epochs of a run plus the best validation point seen so far.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub rows: Vec<EpochRow>,
    pub best_overall: Option<BestPoint>,
}

impl RunRecord {
    /// Appends a row; returns true if it set a new overall best.
    pub fn push(&mut self, row: EpochRow) -> bool {
        let improved = self.best_overall.is_none_or(|b| row.val_loss < b.val_loss);
        if improved {
            self.best_overall = Some(BestPoint::of(&row));
        }
        self.rows.push(row);
        improved
    }

    pub fn best_val_loss(&self) -> Option<f64> {
        self.best_overall.map(|b| b.val_loss)
    }

    pub fn phase_rows(&self, phase: Phase) -> impl Iterator<Item = &EpochRow> {
        self.rows.iter().filter(move |r| r.phase == phase)
    }

    /// Lowest validation loss among rows of `phase`.
    pub fn best_in_phase(&self, phase: Phase) -> Option<f64> {
        self.phase_rows(phase).map(|r| r.val_loss).min_by(f64::total_cmp)
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut sink = JsonlSink::create(path)?;
        for row in &self.rows {
            sink.append(row)?;
        }
        Ok(())
    }

    pub fn read_jsonl(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut record = RunRecord::default();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let row: EpochRow =
                serde_json::from_str(&line).map_err(|e| Error::Input(format!("{}:{}: {e}", path.display(), i + 1)))?;
            record.push(row);
        }
        Ok(record)
    }
}

/// Append-only JSON-lines writer, flushed after every row so a crashed run
/// leaves a readable prefix.
#[derive(Debug)]
pub struct JsonlSink {
    path: PathBuf,
    out: BufWriter<File>,
}

impl JsonlSink {
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
        })
    }

    pub fn append(&mut self, row: &EpochRow) -> Result<()> {
        serde_json::to_writer(&mut self.out, row)?;
        self.out
            .write_all(b"\n")
            .and_then(|_| self.out.flush())
            .map_err(|e| Error::io(&self.path, e))
    }
}
