use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::curriculum::{RunRecord, Strategy};
use crate::error::{Error, Result};
use crate::stats::{relative_performance, summarize, wmw_test, Alternative, ComparisonResult};

use super::runner::{BaselineResult, RunKind, RunSummary, METRICS_FILE, SUMMARY_FILE};

/// One strategy's results against the early-stopping baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyRow {
    pub strategy: Strategy,
    pub seeds: Vec<u64>,
    pub best_losses: Vec<f64>,
    pub failed: usize,
    /// Relative performance (%) of each seed's best loss vs. the baseline best.
    pub relative: Vec<f64>,
    pub mean_rel: Option<f64>,
    pub min_rel: Option<f64>,
    pub max_rel: Option<f64>,
    /// Per-seed cup bests vs. per-run baseline bests, alternative "less".
    pub wmw: Option<ComparisonResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub baseline_best: Option<f64>,
    pub baseline_runs: usize,
    pub rows: Vec<StrategyRow>,
}

pub fn build_table(strategies: &[Strategy], runs: &[RunSummary], baseline: &BaselineResult) -> Result<ComparisonTable> {
    let baseline_losses = baseline.per_run_best();
    let mut rows = Vec::with_capacity(strategies.len());
    for &strategy in strategies {
        let mine: Vec<&RunSummary> = runs
            .iter()
            .filter(|r| r.kind == RunKind::Cup && r.strategy == Some(strategy))
            .collect();
        let ok: Vec<&RunSummary> = mine.iter().copied().filter(|r| r.ok).collect();
        let seeds = ok.iter().map(|r| r.seed).collect();
        let best_losses: Vec<f64> = ok.iter().filter_map(|r| r.best_val_loss).collect();
        let relative = match baseline.best {
            Some(b) => best_losses
                .iter()
                .map(|&l| relative_performance(l, b))
                .collect::<Result<Vec<_>>>()?,
            None => Vec::new(),
        };
        let summary = summarize(&relative);
        let wmw = if best_losses.is_empty() || baseline_losses.is_empty() {
            None
        } else {
            Some(wmw_test(&best_losses, &baseline_losses, Alternative::Less)?)
        };
        rows.push(StrategyRow {
            strategy,
            seeds,
            best_losses,
            failed: mine.len() - ok.len(),
            relative,
            mean_rel: summary.map(|s| s.0),
            min_rel: summary.map(|s| s.1),
            max_rel: summary.map(|s| s.2),
            wmw,
        });
    }
    Ok(ComparisonTable {
        baseline_best: baseline.best,
        baseline_runs: baseline.runs.len(),
        rows,
    })
}

fn opt(v: Option<f64>, prec: usize) -> String {
    v.map(|x| format!("{x:.prec$}")).unwrap_or_else(|| "-".into())
}

pub fn render_csv(table: &ComparisonTable) -> String {
    let mut s =
        String::from("strategy,runs,failed,mean_rel_pct,min_rel_pct,max_rel_pct,wmw_u,wmw_p,wmw_method,significant\n");
    for r in &table.rows {
        let (u, p, method, sig) = match &r.wmw {
            Some(w) => (
                format!("{}", w.u_statistic),
                format!("{}", w.p_value),
                format!("{:?}", w.method).to_lowercase(),
                w.significant.to_string(),
            ),
            None => ("".into(), "".into(), "".into(), "".into()),
        };
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{u},{p},{method},{sig}",
            r.strategy,
            r.best_losses.len(),
            r.failed,
            opt(r.mean_rel, 6),
            opt(r.min_rel, 6),
            opt(r.max_rel, 6),
        );
    }
    s
}

pub fn render_text(table: &ComparisonTable) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "early-stopping best over {} runs: {}",
        table.baseline_runs,
        opt(table.baseline_best, 4)
    );
    let _ = writeln!(
        s,
        "{:<28} {:>4} {:>9} {:>9} {:>9} {:>9}  sig",
        "strategy", "runs", "mean %", "min %", "max %", "p"
    );
    for r in &table.rows {
        let _ = writeln!(
            s,
            "{:<28} {:>4} {:>9} {:>9} {:>9} {:>9}  {}",
            r.strategy.to_string(),
            r.best_losses.len(),
            opt(r.mean_rel, 3),
            opt(r.min_rel, 3),
            opt(r.max_rel, 3),
            opt(r.wmw.map(|w| w.p_value), 4),
            if r.wmw.is_some_and(|w| w.significant) { "*" } else { "" },
        );
    }
    s
}

/// Writes `grid.json`, `grid.csv` and `report.txt` into `dir`.
pub fn write_table(table: &ComparisonTable, dir: &Path) -> Result<()> {
    let write = |name: &str, text: String| {
        let path = dir.join(name);
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    };
    write("grid.json", serde_json::to_string_pretty(table)? + "\n")?;
    write("grid.csv", render_csv(table))?;
    write("report.txt", render_text(table))
}

/// Summaries of every run directory directly below `out`, sorted by run id.
/// Directories without a readable summary are returned separately.
pub fn collect_runs(out: &Path) -> Result<(Vec<RunSummary>, Vec<PathBuf>)> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(out)
        .map_err(|e| Error::io(out, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    let mut runs = Vec::new();
    let mut broken = Vec::new();
    for d in dirs {
        match RunSummary::load(&d) {
            Ok(s) => runs.push(s),
            Err(_) => broken.push(d),
        }
    }
    Ok((runs, broken))
}

/// Rebuilds the comparison table from the run directories under `out`.
pub fn report(out: &Path) -> Result<ComparisonTable> {
    let (runs, _) = collect_runs(out)?;
    let mut strategies: Vec<Strategy> = Vec::new();
    for r in runs.iter().filter(|r| r.kind == RunKind::Cup) {
        if let Some(s) = r.strategy.filter(|s| !strategies.contains(s)) {
            strategies.push(s);
        }
    }
    let baseline = BaselineResult::from_runs(
        runs.iter()
            .filter(|r| r.kind == RunKind::EarlyStopping && r.ok)
            .cloned()
            .collect(),
    );
    build_table(&strategies, &runs, &baseline)
}

pub const PLOT_HEADER: &str = "run_id,phase,cycle,epoch,global_epoch,train_loss,val_loss,capacity_pct,best_pruning_val";

/// Result of [`emit_plot_data`].
#[derive(Debug, Clone, PartialEq)]
pub struct PlotData {
    pub csv: String,
    pub rows: usize,
    /// Run directories that could not be read.
    pub skipped: Vec<(PathBuf, String)>,
}

/// Tidy per-epoch CSV over the given run directories. Each row carries its
/// run's best pruning-phase validation loss as a reference level.
pub fn emit_plot_data(run_dirs: &[PathBuf]) -> PlotData {
    let mut csv = String::from(PLOT_HEADER);
    csv.push('\n');
    let mut rows = 0;
    let mut skipped = Vec::new();
    for dir in run_dirs {
        let run_id = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        let loaded = RunRecord::read_jsonl(&dir.join(METRICS_FILE)).and_then(|rec| {
            if dir.join(SUMMARY_FILE).exists() {
                RunSummary::load(dir)?;
            }
            Ok(rec)
        });
        let record = match loaded {
            Ok(r) => r,
            Err(e) => {
                skipped.push((dir.clone(), e.to_string()));
                continue;
            }
        };
        let reference = record
            .best_in_phase(crate::curriculum::Phase::Prune)
            .map(|v| v.to_string())
            .unwrap_or_default();
        for r in &record.rows {
            let phase = serde_json::to_value(r.phase)
                .ok()
                .and_then(|v| v.as_str().map(str::to_owned))
                .unwrap_or_default();
            let _ = writeln!(
                csv,
                "{run_id},{phase},{},{},{},{},{},{},{reference}",
                r.cycle, r.epoch, r.global_epoch, r.train_loss, r.val_loss, r.capacity_pct
            );
            rows += 1;
        }
    }
    PlotData { csv, rows, skipped }
}
