//! Experiment configuration files.
//!
//! A config is a TOML document with the sections `[model]`, `[data]`,
//! `[optimizer]`, `[strategy]`, `[run]`, `[delay]` and `[sweep]`. Only
//! `[model]` and `sweep.seed` are mandatory; everything else has a default.
//! The cross product of the `[sweep]` lists defines the runs of a grid.
//!
//! ```toml
//! [model]
//! kind = "quadratic"
//!
//! [sweep]
//! n = [1]
//! lambda = [1]
//! strategy = ["agn"]
//! seed = [1]
//! ```
//!
//! Each run is echoed back as a *manifest*: the same schema with every
//! default filled in and single-element sweeps, which re-runs that exact
//! configuration.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::{OptimizerConfig, Strategy, StrategyConfig};
use crate::sim::{DataSpec, DelayModel, ExperimentConfig, ModelSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategySection {
    /// AEASGD elastic coefficient (exchange fraction is `eta * rho`).
    #[serde(default = "default_rho")]
    pub rho: f64,
}

fn default_rho() -> f64 {
    0.1
}

impl Default for StrategySection {
    fn default() -> Self {
        StrategySection { rho: default_rho() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_one")]
    pub epochs: usize,
    #[serde(default = "default_one_u64")]
    pub eval_every: u64,
    #[serde(default = "default_eval_subset")]
    pub eval_subset: usize,
    #[serde(default)]
    pub gradient_noise: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_commits: Option<u64>,
    #[serde(default = "default_threshold")]
    pub divergence_threshold: f64,
    #[serde(default = "default_patience")]
    pub divergence_patience: usize,
}

fn default_batch_size() -> usize {
    128
}
fn default_one() -> usize {
    1
}
fn default_one_u64() -> u64 {
    1
}
fn default_eval_subset() -> usize {
    1024
}
fn default_threshold() -> f64 {
    1e12
}
fn default_patience() -> usize {
    10
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            batch_size: default_batch_size(),
            epochs: 1,
            eval_every: 1,
            eval_subset: default_eval_subset(),
            gradient_noise: 0.0,
            max_commits: None,
            divergence_threshold: default_threshold(),
            divergence_patience: default_patience(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    #[serde(default = "default_sweep_n")]
    pub n: Vec<usize>,
    #[serde(default = "default_sweep_n")]
    pub lambda: Vec<usize>,
    #[serde(default = "default_strategies")]
    pub strategy: Vec<Strategy>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<Vec<u64>>,
}

fn default_sweep_n() -> Vec<usize> {
    vec![1]
}
fn default_strategies() -> Vec<Strategy> {
    vec![Strategy::Agn]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    model: ModelSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    data: Option<DataSpec>,
    #[serde(default = "default_optimizer")]
    optimizer: OptimizerConfig,
    #[serde(default)]
    strategy: StrategySection,
    #[serde(default)]
    run: RunSection,
    #[serde(default)]
    delay: DelayModel,
    sweep: SweepSection,
}

fn default_optimizer() -> OptimizerConfig {
    OptimizerConfig::sgd(0.1)
}

/// Default dataset when `[data]` is omitted.
fn default_data(model: &ModelSpec) -> DataSpec {
    match model {
        ModelSpec::Quadratic { .. } => DataSpec::Steps { count: 12_800 },
        _ => DataSpec::TwoMoons {
            count: 1000,
            noise: 0.1,
        },
    }
}

/// Shared settings plus the lists whose cross product forms the runs.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub model: ModelSpec,
    pub data: DataSpec,
    pub optimizer: OptimizerConfig,
    pub strategy: StrategySection,
    pub run: RunSection,
    pub delay: DelayModel,
    pub sweep_n: Vec<usize>,
    pub sweep_lambda: Vec<usize>,
    pub strategies: Vec<Strategy>,
    pub seeds: Vec<u64>,
}

/// One point of the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub index: usize,
    pub n: usize,
    pub lambda: usize,
    pub strategy: Strategy,
    pub seed: u64,
    pub config: ExperimentConfig,
}

impl RunSpec {
    /// File stem for this run's outputs.
    pub fn name(&self) -> String {
        format!(
            "r{:04}_n{}_l{}_{}_s{}",
            self.index, self.n, self.lambda, self.strategy, self.seed
        )
    }
}

pub fn parse_config(path: impl AsRef<Path>) -> Result<GridSpec> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    parse_config_str(&text).map_err(|e| match e {
        Error::Parse { field, message } => Error::Parse {
            field: format!("{}: {field}", path.display()),
            message,
        },
        other => other,
    })
}

pub fn parse_config_str(text: &str) -> Result<GridSpec> {
    let file: ConfigFile = toml::from_str(text).map_err(|e| {
        let message = e.to_string();
        let field = match e.span() {
            Some(span) => format!("line {}", 1 + text[..span.start].matches('\n').count()),
            None => "config".to_string(),
        };
        Error::parse(field, message.trim_end().to_string())
    })?;
    let seeds = file
        .sweep
        .seed
        .clone()
        .ok_or_else(|| Error::parse("sweep.seed", "seed required"))?;
    let grid = GridSpec {
        data: file.data.clone().unwrap_or_else(|| default_data(&file.model)),
        model: file.model,
        optimizer: file.optimizer,
        strategy: file.strategy,
        run: file.run,
        delay: file.delay,
        sweep_n: file.sweep.n,
        sweep_lambda: file.sweep.lambda,
        strategies: file.sweep.strategy,
        seeds,
    };
    grid.validate()?;
    Ok(grid)
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, empty) in [
            ("sweep.n", self.sweep_n.is_empty()),
            ("sweep.lambda", self.sweep_lambda.is_empty()),
            ("sweep.strategy", self.strategies.is_empty()),
            ("sweep.seed", self.seeds.is_empty()),
        ] {
            if empty {
                return Err(Error::parse(name, "sweep list must not be empty"));
            }
        }
        if let Some(&seed) = self.seeds.iter().find(|&&s| s > i64::MAX as u64) {
            return Err(Error::parse("sweep.seed", format!("seed {seed} exceeds 2^63 - 1")));
        }
        for run in self.runs() {
            run.config
                .validate()
                .map_err(|e| Error::config(format!("run {}: {e}", run.name())))?;
        }
        Ok(())
    }

    /// Replaces the seed list by a single seed.
    pub fn override_seed(&mut self, seed: u64) {
        self.seeds = vec![seed];
    }

    /// All runs, nested as n, then lambda, then strategy, then seed, each in listed order.
    pub fn runs(&self) -> Vec<RunSpec> {
        let mut out = Vec::new();
        for &n in &self.sweep_n {
            for &lambda in &self.sweep_lambda {
                for &strategy in &self.strategies {
                    for &seed in &self.seeds {
                        let index = out.len();
                        out.push(RunSpec {
                            index,
                            n,
                            lambda,
                            strategy,
                            seed,
                            config: self.experiment(n, lambda, strategy, seed),
                        });
                    }
                }
            }
        }
        out
    }

    fn experiment(&self, n: usize, lambda: usize, strategy: Strategy, seed: u64) -> ExperimentConfig {
        let mut strategy = StrategyConfig::new(strategy, lambda);
        strategy.rho = self.strategy.rho;
        ExperimentConfig {
            model: self.model.clone(),
            data: self.data.clone(),
            workers: n,
            strategy,
            optimizer: self.optimizer,
            batch_size: self.run.batch_size,
            epochs: self.run.epochs,
            delay: self.delay,
            seed,
            eval_every: self.run.eval_every,
            eval_subset: self.run.eval_subset,
            gradient_noise: self.run.gradient_noise,
            max_commits: self.run.max_commits,
            divergence_threshold: self.run.divergence_threshold,
            divergence_patience: self.run.divergence_patience,
        }
    }

    /// Fully explicit single-run config for `run`.
    pub fn manifest(&self, run: &RunSpec) -> Result<String> {
        let file = ConfigFile {
            model: self.model.clone(),
            data: Some(self.data.clone()),
            optimizer: self.optimizer,
            strategy: self.strategy.clone(),
            run: self.run.clone(),
            delay: self.delay,
            sweep: SweepSection {
                n: vec![run.n],
                lambda: vec![run.lambda],
                strategy: vec![run.strategy],
                seed: Some(vec![run.seed]),
            },
        };
        toml::to_string(&file).map_err(|e| Error::config(format!("cannot serialize manifest: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[model]
kind = "quadratic"

[sweep]
n = [1]
lambda = [1]
strategy = ["agn"]
seed = [1]
"#;

    #[test]
    fn minimal_config_is_one_run() {
        let g = parse_config_str(MINIMAL).unwrap();
        assert_eq!(g.runs().len(), 1);
        assert_eq!(g.run.batch_size, 128);
        assert!(matches!(g.data, DataSpec::Steps { .. }));
    }

    #[test]
    fn table_shaped_grid() {
        let text = r#"
[model]
kind = "logistic-regression"
[optimizer]
kind = "adam"
eta = 0.01
[sweep]
n = [10, 20, 40]
lambda = [10, 15, 20, 25, 30, 35, 40]
strategy = ["agn", "aeasgd"]
seed = [7]
"#;
        let g = parse_config_str(text).unwrap();
        assert_eq!(g.runs().len(), 42);
        assert_eq!(g.optimizer.beta2, 0.999);
    }

    #[test]
    fn missing_seed() {
        let text = MINIMAL.replace("seed = [1]\n", "");
        let err = parse_config_str(&text).unwrap_err().to_string();
        assert!(err.contains("seed required"), "{err}");
    }

    #[test]
    fn unknown_key_names_key_and_line() {
        let text = MINIMAL.replace("lambda = [1]", "lamda = [1]");
        let err = parse_config_str(&text).unwrap_err().to_string();
        assert!(err.contains("lamda") && err.contains("line 7"), "{err}");
    }

    #[test]
    fn type_mismatch_names_key_and_line() {
        let text = MINIMAL.replace("n = [1]", "n = \"four\"");
        let err = parse_config_str(&text).unwrap_err().to_string();
        assert!(err.contains("line 6"), "{err}");
    }

    #[test]
    fn invalid_run_is_rejected_before_compute() {
        let text = MINIMAL.replace("strategy = [\"agn\"]", "strategy = [\"downpour\"]").replace("lambda = [1]", "lambda = [5]");
        assert!(matches!(parse_config_str(&text), Err(Error::Config(_))));
    }

    #[test]
    fn manifest_round_trips() {
        let g = parse_config_str(MINIMAL).unwrap();
        let run = &g.runs()[0];
        let manifest = g.manifest(run).unwrap();
        let again = parse_config_str(&manifest).unwrap();
        assert_eq!(again.runs()[0].config, run.config);
        assert!(manifest.contains("batch_size = 128"), "{manifest}");
    }
}
