//! Baselines, strategy sweeps, reports and plot data.

mod report;
mod runner;
mod spec;

pub use report::{
    build_table, collect_runs, emit_plot_data, render_csv, render_text, report, write_table, ComparisonTable, PlotData,
    StrategyRow, PLOT_HEADER,
};
pub use runner::{
    cup_run_id, es_run_id, imp_run_id, run_parallel, BaselineResult, Experiment, GridOutcome, RunKind, RunSummary,
    METRICS_FILE, SUMMARY_FILE,
};
pub use spec::{BaselineSpec, DataSpec, ExperimentSpec, ModelSpec};
