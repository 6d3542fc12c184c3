//! Grid execution and CSV emission.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::config::{GridSpec, RunSpec};
use crate::error::{Error, Result};
use crate::metrics::{staleness_stats, temporal_efficiency, Trace};
use crate::sim::{self, RunResult};

pub const TRACE_HEADER: [&str; 7] = [
    "commit_index",
    "sim_time",
    "train_loss",
    "train_accuracy",
    "tau",
    "delta_norm",
    "param_distance",
];

pub const SUMMARY_HEADER: [&str; 12] = [
    "n",
    "lambda",
    "strategy",
    "seed",
    "sim_time",
    "final_train_accuracy",
    "final_train_loss",
    "mean_tau",
    "diverged",
    "halt",
    "reference_strategy",
    "efficiency",
];

/// 17 significant digits, enough to round-trip any f64.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn opt_f64(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

pub fn write_trace_csv(result: &RunResult, out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRACE_HEADER)?;
    for row in &result.rows {
        w.write_record([
            row.commit_index.to_string(),
            fmt_f64(row.sim_time),
            opt_f64(row.train_loss),
            opt_f64(row.train_accuracy),
            row.tau.map(|t| t.to_string()).unwrap_or_default(),
            opt_f64(row.delta_norm),
            opt_f64(row.param_distance),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads the `(sim_time, metric)` series from a trace CSV, skipping rows
/// where the metric was not evaluated.
pub fn read_trace_csv(path: impl AsRef<Path>, metric: &str) -> Result<Trace> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::parse(format!("{}: header", path.display()), format!("missing column `{name}`")))
    };
    let time_col = column("sim_time")?;
    let value_col = column(metric)?;
    let mut trace = Trace::new(metric);
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        let value = record.get(value_col).unwrap_or("");
        if value.is_empty() {
            continue;
        }
        let parse = |s: &str, what: &str| {
            s.parse::<f64>().map_err(|_| {
                Error::parse(
                    format!("{}: row {}", path.display(), line + 2),
                    format!("invalid {what} `{s}`"),
                )
            })
        };
        let t = parse(record.get(time_col).unwrap_or(""), "sim_time")?;
        trace.push(t, parse(value, metric)?)?;
    }
    Ok(trace)
}

/// Executes a single run and writes `<name>.csv` and `<name>.toml` into `dir`.
pub fn execute_run(grid: &GridSpec, run: &RunSpec, dir: &Path) -> Result<RunResult> {
    let result = sim::run(&run.config)?;
    let name = run.name();
    let file = fs::File::create(dir.join(format!("{name}.csv")))?;
    write_trace_csv(&result, std::io::BufWriter::new(file))?;
    fs::write(dir.join(format!("{name}.toml")), grid.manifest(run)?)?;
    Ok(result)
}

/// Per-run line of the summary table.
#[derive(Debug, Clone)]
pub struct SummaryRow {
    pub run: RunSpec,
    pub sim_time: f64,
    pub final_accuracy: Option<f64>,
    pub final_loss: f64,
    pub mean_tau: Option<f64>,
    pub diverged: bool,
    pub halt: sim::Halt,
    pub accuracy: Trace,
    /// `E(reference, this run)` on training accuracy.
    pub efficiency: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct GridOutput {
    pub rows: Vec<SummaryRow>,
    pub summary_path: PathBuf,
    pub run_dir: PathBuf,
}

/// Runs every point of `grid` (in parallel), writing per-run trace CSVs and
/// manifests under `out/runs/` and the summary to `out/summary.csv`.
///
/// The efficiency column holds `E(reference, row)` where the reference is the
/// first listed strategy at the same `(n, lambda, seed)`; a diverged or
/// failed run simply has no efficiency.
pub fn run_grid(grid: &GridSpec, out: &Path) -> Result<GridOutput> {
    let run_dir = out.join("runs");
    fs::create_dir_all(&run_dir)?;
    let runs = grid.runs();
    let results: Vec<Result<RunResult>> = runs.par_iter().map(|run| execute_run(grid, run, &run_dir)).collect();

    let mut rows = Vec::with_capacity(runs.len());
    for (run, result) in runs.into_iter().zip(results) {
        let result = result?;
        rows.push(SummaryRow {
            sim_time: result.end_time,
            final_accuracy: result.final_eval.accuracy,
            final_loss: result.final_eval.loss,
            mean_tau: staleness_stats(&result.log).ok().map(|s| s.mean_tau),
            diverged: result.diverged,
            halt: result.halt,
            accuracy: result.accuracy_trace(),
            efficiency: None,
            run,
        });
    }
    let reference = grid.strategies[0];
    for i in 0..rows.len() {
        let key = (rows[i].run.n, rows[i].run.lambda, rows[i].run.seed);
        let reference_row = rows
            .iter()
            .find(|r| r.run.strategy == reference && (r.run.n, r.run.lambda, r.run.seed) == key);
        rows[i].efficiency = reference_row
            .and_then(|r| temporal_efficiency(&r.accuracy, &rows[i].accuracy).ok())
            .map(|e| e.ratio);
    }

    let summary_path = out.join("summary.csv");
    let mut w = csv::Writer::from_path(&summary_path)?;
    w.write_record(SUMMARY_HEADER)?;
    for r in &rows {
        w.write_record([
            r.run.n.to_string(),
            r.run.lambda.to_string(),
            r.run.strategy.to_string(),
            r.run.seed.to_string(),
            fmt_f64(r.sim_time),
            opt_f64(r.final_accuracy),
            fmt_f64(r.final_loss),
            opt_f64(r.mean_tau),
            r.diverged.to_string(),
            r.halt.name().to_string(),
            reference.to_string(),
            opt_f64(r.efficiency),
        ])?;
    }
    w.flush()?;
    Ok(GridOutput {
        rows,
        summary_path,
        run_dir,
    })
}
