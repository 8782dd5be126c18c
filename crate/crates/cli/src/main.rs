use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use cup_curriculum::curriculum::Strategy;
use cup_curriculum::experiment::{
    collect_runs, emit_plot_data, render_text, report, run_parallel, write_table, Experiment, ExperimentSpec,
    RunSummary,
};

#[derive(Parser)]
#[command(
    name = "cup",
    version,
    about = "Prune-then-regrow training experiments for small transformer LMs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment config (TOML). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory, overriding the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seeds to run, overriding the config.
    #[arg(long = "seed", alias = "seeds", value_delimiter = ',')]
    seeds: Vec<u64>,
    /// Concurrent runs.
    #[arg(long, default_value_t = 1)]
    parallel: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Run the curriculum with one strategy for every seed.
    Train {
        #[command(flatten)]
        common: Common,
        /// rewinding:initialization:update, e.g. best:random:identical.
        #[arg(long)]
        strategy: Option<Strategy>,
    },
    /// Run the early-stopping and/or pruning-only baselines.
    Baseline {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = BaselineKind::All)]
        kind: BaselineKind,
    },
    /// Sweep strategies against the early-stopping baseline.
    Grid {
        #[command(flatten)]
        common: Common,
        /// Comma-separated strategies, or `all` for every combination.
        #[arg(long, default_value = "best:random:identical")]
        strategies: String,
    },
    /// Rebuild the comparison table from finished runs.
    Report {
        #[arg(long)]
        out: PathBuf,
    },
    /// Write per-epoch CSV for plotting.
    Plotdata {
        #[arg(long, default_value = "runs")]
        out: PathBuf,
        /// Run directories; defaults to every run under --out.
        runs: Vec<PathBuf>,
        /// Destination file; defaults to <out>/plot.csv.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BaselineKind {
    EarlyStopping,
    Imp,
    All,
}

fn load_spec(common: &Common) -> Result<ExperimentSpec> {
    let mut spec = match &common.config {
        Some(p) => ExperimentSpec::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => ExperimentSpec::default(),
    };
    if let Some(out) = &common.out {
        spec.out = out.clone();
    }
    if !common.seeds.is_empty() {
        spec.seeds = common.seeds.clone();
    }
    spec.validate()?;
    Ok(spec)
}

fn prepare(common: &Common) -> Result<(Experiment, PathBuf)> {
    let spec = load_spec(common)?;
    let out = spec.out.clone();
    spec.write_resolved(&out)?;
    Ok((Experiment::prepare(spec)?, out))
}

fn parse_strategies(s: &str) -> Result<Vec<Strategy>> {
    if s.trim().eq_ignore_ascii_case("all") {
        return Ok(Strategy::all());
    }
    s.split(',')
        .map(|p| p.trim().parse::<Strategy>().map_err(Into::into))
        .collect()
}

fn print_runs(runs: &[RunSummary]) -> usize {
    let mut failed = 0;
    for r in runs {
        match (&r.error, r.best_val_loss) {
            (Some(e), _) => {
                failed += 1;
                println!("{:<40} FAILED  {e}", r.run_id);
            }
            (None, Some(best)) => println!("{:<40} best val {best:.4}  epochs {}", r.run_id, r.epochs),
            (None, None) => println!("{:<40} no epochs", r.run_id),
        }
    }
    failed
}

fn run(cli: Cli) -> Result<usize> {
    match cli.command {
        Command::Train { common, strategy } => {
            let (exp, out) = prepare(&common)?;
            let strategy = strategy.unwrap_or_else(|| exp.spec.curriculum.strategy());
            let runs = run_parallel(&exp.spec.seeds, common.parallel, |&seed| {
                exp.run_cup(seed, strategy, Some(&out)).map(|r| r.0)
            })?;
            Ok(print_runs(&runs))
        }
        Command::Baseline { common, kind } => {
            let (exp, out) = prepare(&common)?;
            let mut runs = Vec::new();
            if kind != BaselineKind::Imp {
                let es = exp.run_early_stopping_baseline(Some(&out), common.parallel)?;
                if let Some(best) = es.best {
                    info!("early-stopping best {best:.4}");
                }
                runs.extend(es.runs);
            }
            if kind != BaselineKind::EarlyStopping {
                runs.extend(run_parallel(&exp.spec.seeds, common.parallel, |&seed| {
                    exp.run_imp_baseline(seed, Some(&out)).map(|r| r.0)
                })?);
            }
            Ok(print_runs(&runs))
        }
        Command::Grid { common, strategies } => {
            let strategies = parse_strategies(&strategies)?;
            let (exp, out) = prepare(&common)?;
            let grid = exp.run_strategy_grid(&strategies, Some(&out), common.parallel)?;
            let failed = print_runs(&grid.baseline.runs) + print_runs(&grid.runs);
            print!("{}", render_text(&grid.table));
            Ok(failed)
        }
        Command::Report { out } => {
            let table = report(&out)?;
            if table.rows.is_empty() {
                bail!("no curriculum runs found under {}", out.display());
            }
            write_table(&table, &out)?;
            print!("{}", render_text(&table));
            Ok(0)
        }
        Command::Plotdata { out, runs, csv } => {
            let dirs = if runs.is_empty() { run_dirs(&out)? } else { runs };
            let plot = emit_plot_data(&dirs);
            for (dir, err) in &plot.skipped {
                eprintln!("skipped {}: {err}", dir.display());
            }
            let path = csv.unwrap_or_else(|| out.join("plot.csv"));
            fs::write(&path, &plot.csv).with_context(|| format!("writing {}", path.display()))?;
            println!("{} rows -> {}", plot.rows, path.display());
            Ok(0)
        }
    }
}

fn run_dirs(out: &Path) -> Result<Vec<PathBuf>> {
    let (runs, broken) = collect_runs(out)?;
    let mut dirs: Vec<PathBuf> = runs.iter().map(|r| out.join(&r.run_id)).collect();
    dirs.extend(broken);
    dirs.sort();
    Ok(dirs)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(0) => ExitCode::SUCCESS,
        Ok(n) => {
            eprintln!("{n} run(s) failed");
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::FAILURE
        }
    }
}

/// The error chain joined by `: `, skipping causes the previous message
/// already spells out.
fn describe(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let msg = cause.to_string();
        if !out.contains(&msg) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&msg);
        }
    }
    out
}
