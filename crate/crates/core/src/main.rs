use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use agn_sim::config::{parse_config, GridSpec};
use agn_sim::grid::{execute_run, fmt_f64, read_trace_csv, run_grid};
use agn_sim::metrics::{staleness_stats, temporal_efficiency};
use agn_sim::Result;

#[derive(Parser)]
#[command(name = "agn-sim", version, about = "Asynchronous parameter-server SGD simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Output directory for traces, manifests and summaries.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Replace the config's seed list with this seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Suppress progress output.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run a config that describes exactly one experiment (e.g. a manifest).
    Run { config: PathBuf },
    /// Run every point of a config's sweep and write a summary table.
    Grid { config: PathBuf },
    /// Temporal efficiency E(a, b) of two trace CSVs on training accuracy.
    Efficiency {
        trace_a: PathBuf,
        trace_b: PathBuf,
        /// Column to integrate.
        #[arg(long, default_value = "train_accuracy")]
        metric: String,
    },
    /// Parse a config and list the runs it expands to.
    Validate { config: PathBuf },
}

fn load(path: &PathBuf, seed: Option<u64>) -> Result<GridSpec> {
    let mut grid = parse_config(path)?;
    if let Some(seed) = seed {
        grid.override_seed(seed);
        grid.validate()?;
    }
    Ok(grid)
}

fn execute(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Run { config } => {
            let grid = load(config, cli.seed)?;
            let runs = grid.runs();
            if runs.len() != 1 {
                return Err(agn_sim::Error::Config(format!(
                    "`run` needs a single-run config, this one expands to {} runs (use `grid`)",
                    runs.len()
                )));
            }
            std::fs::create_dir_all(&cli.out)?;
            let run = &runs[0];
            let result = execute_run(&grid, run, &cli.out)?;
            if !cli.quiet {
                let mean_tau = staleness_stats(&result.log).map(|s| s.mean_tau).unwrap_or(0.0);
                println!(
                    "{}: commits={} sim_time={} final_loss={} final_accuracy={} mean_tau={} diverged={} halt={}",
                    run.name(),
                    result.log.len(),
                    result.end_time,
                    result.final_eval.loss,
                    result.final_eval.accuracy.map_or("-".into(), |a| a.to_string()),
                    mean_tau,
                    result.diverged,
                    result.halt.name()
                );
            }
        }
        Command::Grid { config } => {
            let grid = load(config, cli.seed)?;
            if !cli.quiet {
                eprintln!("running {} configurations", grid.runs().len());
            }
            let started = std::time::Instant::now();
            let output = run_grid(&grid, &cli.out)?;
            if !cli.quiet {
                for r in &output.rows {
                    println!(
                        "{:<24} acc={:<8} tau={:<6} diverged={:<5} E={}",
                        r.run.name(),
                        r.final_accuracy.map_or("-".into(), |a| format!("{a:.4}")),
                        r.mean_tau.map_or("-".into(), |t| format!("{t:.2}")),
                        r.diverged,
                        r.efficiency.map_or("-".into(), |e| format!("{e:.4}"))
                    );
                }
                eprintln!(
                    "summary: {} (wall clock {:.1}s)",
                    output.summary_path.display(),
                    started.elapsed().as_secs_f64()
                );
            }
        }
        Command::Efficiency { trace_a, trace_b, metric } => {
            let a = read_trace_csv(trace_a, metric)?;
            let b = read_trace_csv(trace_b, metric)?;
            let report = temporal_efficiency(&a, &b)?;
            println!("m_shared,surface_a,surface_b,ratio");
            println!(
                "{},{},{},{}",
                fmt_f64(report.m_shared),
                fmt_f64(report.surface_a),
                fmt_f64(report.surface_b),
                fmt_f64(report.ratio)
            );
        }
        Command::Validate { config } => {
            let grid = load(config, cli.seed)?;
            let runs = grid.runs();
            println!("{} runs", runs.len());
            if !cli.quiet {
                for run in &runs {
                    println!("{}", run.name());
                }
                if let Some(first) = runs.first() {
                    println!("\n# manifest of {}\n{}", first.name(), grid.manifest(first)?);
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
