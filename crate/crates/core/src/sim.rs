//! Deterministic discrete-event driver: `n` logical workers against one
//! parameter server.
//!
//! Every worker pulls, computes a round, and becomes ready to commit after a
//! simulated duration proportional to the local steps it took. Ready commits
//! are applied strictly in `(time, worker id)` order, so a configuration
//! fully determines the commit order and hence the whole trajectory.
//!
//! Rounds are computed when they are scheduled (right after the worker's
//! pull) rather than when their event is popped. Both give the same result
//! because a round only depends on the pulled snapshot and the worker's own
//! state.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::path::PathBuf;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{self, Dataset, SyntheticKind};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, Evaluation, Trace};
use crate::models::{Activation, Model, Quadratic};
use crate::optim::{LocalOptimizer, OptimizerConfig, Round, StrategyConfig, WorkerState};
use crate::params::ParamVector;
use crate::server::{Applied, Commit, LogEntry, ParameterServer};
use crate::substream;

/// Seed stream tags; each consumer of randomness gets its own stream.
pub mod streams {
    pub const DATA: u64 = 0xDA7A;
    pub const SHARD: u64 = 0x54A2;
    pub const INIT: u64 = 0x1417;
    pub const EVAL: u64 = 0xE7A1;
    pub const NOISE: u64 = 0x4015;
    pub const DELAY: u64 = 0xDE1A;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModelSpec {
    Quadratic {
        #[serde(default = "identity2")]
        matrix: Vec<Vec<f64>>,
        #[serde(default = "zeros2")]
        optimum: Vec<f64>,
        /// Initial central variable; seeded around the optimum when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        start: Option<Vec<f64>>,
    },
    LogisticRegression,
    Mlp {
        hidden: Vec<usize>,
        #[serde(default = "default_activation")]
        activation: Activation,
    },
}

fn identity2() -> Vec<Vec<f64>> {
    vec![vec![1.0, 0.0], vec![0.0, 1.0]]
}
fn zeros2() -> Vec<f64> {
    vec![0.0, 0.0]
}
fn default_activation() -> Activation {
    Activation::Tanh
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DataSpec {
    /// Featureless samples that only meter local steps (for the quadratic).
    Steps { count: usize },
    TwoGaussians { count: usize, noise: f64 },
    TwoMoons { count: usize, noise: f64 },
    Idx {
        images: PathBuf,
        labels: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        limit: Option<usize>,
    },
}

impl DataSpec {
    pub fn load(&self, seed: u64) -> Result<Dataset> {
        let seed = substream(seed, streams::DATA, 0);
        match self {
            DataSpec::Steps { count } => Dataset::placeholder(*count),
            DataSpec::TwoGaussians { count, noise } => {
                data::gen_synthetic(SyntheticKind::TwoGaussians, *count, *noise, seed)
            }
            DataSpec::TwoMoons { count, noise } => data::gen_synthetic(SyntheticKind::TwoMoons, *count, *noise, seed),
            DataSpec::Idx { images, labels, limit } => {
                let d = data::load_idx(images, labels)?;
                Ok(match limit {
                    Some(l) => d.truncated(*l),
                    None => d,
                })
            }
        }
    }
}

impl ModelSpec {
    /// Instantiates the model; dense models take their input width and class
    /// count from the dataset.
    pub fn build(&self, dataset: &Dataset) -> Result<Model> {
        let outputs = match dataset.class_count() {
            0..=2 => 1,
            k => k,
        };
        match self {
            ModelSpec::Quadratic { matrix, optimum, .. } => Ok(Model::Quadratic(Quadratic::new(
                matrix.clone(),
                ParamVector::from_vec(optimum.clone()),
            )?)),
            ModelSpec::LogisticRegression => {
                if outputs != 1 {
                    return Err(Error::config("logistic regression needs a two-class dataset"));
                }
                Model::logistic_regression(dataset.feature_dim())
            }
            ModelSpec::Mlp { hidden, activation } => {
                let mut widths = vec![dataset.feature_dim()];
                widths.extend_from_slice(hidden);
                widths.push(outputs);
                Model::mlp(widths, *activation)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DelayKind {
    Homogeneous,
    Heterogeneous,
}

/// Simulated compute time per round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DelayModel {
    pub kind: DelayKind,
    #[serde(default = "one")]
    pub base_round_time: f64,
    #[serde(default)]
    pub jitter: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for DelayModel {
    fn default() -> Self {
        DelayModel::homogeneous(1.0)
    }
}

impl DelayModel {
    pub fn homogeneous(base_round_time: f64) -> Self {
        DelayModel {
            kind: DelayKind::Homogeneous,
            base_round_time,
            jitter: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.base_round_time > 0.0 && self.base_round_time.is_finite()) {
            return Err(Error::config("delay: base_round_time must be positive"));
        }
        if !(0.0..1.0).contains(&self.jitter) {
            return Err(Error::config("delay: jitter must lie in [0, 1)"));
        }
        if self.kind == DelayKind::Homogeneous && self.jitter != 0.0 {
            return Err(Error::config("delay: homogeneous delays cannot have jitter"));
        }
        Ok(())
    }

    /// `base * steps`, times `(1 + u)` with `u ~ U(-jitter, jitter)` when heterogeneous.
    pub fn duration(&self, steps: usize, rng: &mut impl Rng) -> f64 {
        let base = self.base_round_time * steps as f64;
        match self.kind {
            DelayKind::Homogeneous => base,
            DelayKind::Heterogeneous if self.jitter == 0.0 => base,
            DelayKind::Heterogeneous => base * (1.0 + rng.random_range(-self.jitter..self.jitter)),
        }
    }
}

/// Everything that determines one run.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    pub data: DataSpec,
    pub workers: usize,
    pub strategy: StrategyConfig,
    pub optimizer: OptimizerConfig,
    pub batch_size: usize,
    /// Passes each worker makes over its own shard.
    pub epochs: usize,
    pub delay: DelayModel,
    pub seed: u64,
    /// Evaluate the central variable every this many commits.
    pub eval_every: u64,
    /// Size of the fixed evaluation subset.
    pub eval_subset: usize,
    /// Std-dev of additive Gaussian noise on every local gradient.
    pub gradient_noise: f64,
    pub max_commits: Option<u64>,
    /// Halt once `‖θ̃‖` exceeds this.
    pub divergence_threshold: f64,
    /// Halt after this many consecutive non-finite evaluations.
    pub divergence_patience: usize,
}

impl ExperimentConfig {
    pub fn new(model: ModelSpec, data: DataSpec, workers: usize, strategy: StrategyConfig, optimizer: OptimizerConfig, seed: u64) -> Self {
        ExperimentConfig {
            model,
            data,
            workers,
            strategy,
            optimizer,
            batch_size: 1,
            epochs: 1,
            delay: DelayModel::default(),
            seed,
            eval_every: 1,
            eval_subset: 1024,
            gradient_noise: 0.0,
            max_commits: None,
            divergence_threshold: 1e12,
            divergence_patience: 10,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.workers == 0 {
            return Err(Error::config("at least one worker is required"));
        }
        if self.batch_size == 0 || self.epochs == 0 || self.eval_every == 0 || self.eval_subset == 0 {
            return Err(Error::config("batch_size, epochs, eval_every and eval_subset must be positive"));
        }
        if !(self.gradient_noise >= 0.0 && self.gradient_noise.is_finite()) {
            return Err(Error::config("gradient_noise must be a nonnegative number"));
        }
        if !(self.divergence_threshold > 0.0) || self.divergence_patience == 0 {
            return Err(Error::config("divergence bailout settings must be positive"));
        }
        if let ModelSpec::Quadratic { optimum, start: Some(start), .. } = &self.model {
            if start.len() != optimum.len() {
                return Err(Error::config("quadratic: start and optimum dimensions differ"));
            }
        }
        self.strategy.validate()?;
        self.optimizer.validate()?;
        self.delay.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Halt {
    /// Every shard ran out.
    Completed,
    CommitLimit,
    /// `‖θ̃‖` exceeded the divergence threshold.
    NormBailout,
    /// Too many consecutive non-finite evaluations.
    NonFiniteLoss,
    /// A worker produced a non-finite gradient.
    WorkerFault,
}

impl Halt {
    pub fn name(self) -> &'static str {
        match self {
            Halt::Completed => "completed",
            Halt::CommitLimit => "commit-limit",
            Halt::NormBailout => "norm-bailout",
            Halt::NonFiniteLoss => "non-finite-loss",
            Halt::WorkerFault => "worker-fault",
        }
    }
}

/// One CSV row: the initial state (commit 0) or an applied commit.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub commit_index: u64,
    pub sim_time: f64,
    pub train_loss: Option<f64>,
    pub train_accuracy: Option<f64>,
    pub tau: Option<u64>,
    pub delta_norm: Option<f64>,
    pub param_distance: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub rows: Vec<TraceRow>,
    pub log: Vec<LogEntry>,
    pub final_params: ParamVector,
    pub diverged: bool,
    pub halt: Halt,
    pub end_time: f64,
    pub initial_eval: Evaluation,
    pub final_eval: Evaluation,
}

impl RunResult {
    /// Training accuracy of the central variable over simulated time
    /// (empty for non-classifiers).
    pub fn accuracy_trace(&self) -> Trace {
        self.metric_trace("train_accuracy", |r| r.train_accuracy)
    }

    pub fn loss_trace(&self) -> Trace {
        self.metric_trace("train_loss", |r| r.train_loss)
    }

    fn metric_trace(&self, name: &str, pick: impl Fn(&TraceRow) -> Option<f64>) -> Trace {
        let mut trace = Trace::new(name);
        for row in &self.rows {
            if let Some(v) = pick(row) {
                // rows are time-ordered by construction
                trace.push(row.sim_time, v).expect("rows are time-ordered");
            }
        }
        trace
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Event {
    time: f64,
    worker: usize,
}

impl Eq for Event {}

impl Ord for Event {
    // reversed: BinaryHeap is a max-heap and we pop the earliest event
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.worker.cmp(&self.worker))
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Runs `config` to completion.
pub fn run(config: &ExperimentConfig) -> Result<RunResult> {
    run_with_observer(config, |_, _| {})
}

/// Runs `config`, calling `observer` with every commit as sent and as applied.
pub fn run_with_observer(config: &ExperimentConfig, mut observer: impl FnMut(&Commit, &Applied)) -> Result<RunResult> {
    let mut sim = Simulation::new(config)?;
    sim.initial_evaluation()?;
    for k in 0..config.workers {
        sim.schedule(k, 0.0)?;
    }
    while sim.halt.is_none() {
        let Some(event) = sim.queue.pop() else {
            sim.halt = Some(Halt::Completed);
            break;
        };
        let commit = sim.pending[event.worker]
            .take()
            .expect("every queued event has a pending commit");
        let applied = sim.server.apply_commit(&commit, config.strategy.strategy, event.time)?;
        observer(&commit, &applied);
        sim.record(&applied, event.time)?;
        if sim.halt.is_none() {
            sim.schedule(event.worker, event.time)?;
        }
    }
    sim.finish()
}

struct Simulation<'a> {
    config: &'a ExperimentConfig,
    model: Model,
    eval_set: Dataset,
    server: ParameterServer,
    workers: Vec<WorkerState>,
    pending: Vec<Option<Commit>>,
    queue: BinaryHeap<Event>,
    delay_rng: ChaCha8Rng,
    rows: Vec<TraceRow>,
    initial_eval: Option<Evaluation>,
    last_eval: Option<Evaluation>,
    non_finite_streak: usize,
    diverged: bool,
    halt: Option<Halt>,
    now: f64,
}

impl<'a> Simulation<'a> {
    fn new(config: &'a ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let dataset = Arc::new(config.data.load(config.seed)?);
        let model = config.model.build(&dataset)?;
        let smallest_shard = dataset.len() / config.workers;
        if smallest_shard < config.batch_size {
            return Err(Error::config(format!(
                "{} samples over {} workers leaves shards smaller than the mini-batch size {}",
                dataset.len(),
                config.workers,
                config.batch_size
            )));
        }
        let initial = match &config.model {
            ModelSpec::Quadratic { start: Some(start), .. } => ParamVector::from_vec(start.clone()),
            _ => model.init_params(substream(config.seed, streams::INIT, 0)),
        };
        initial.check_dim(model.dim(), "initial parameters")?;

        let shards = data::shard(&dataset, config.workers, substream(config.seed, streams::SHARD, 0))?;
        let workers = shards
            .into_iter()
            .enumerate()
            .map(|(k, shard)| {
                let opt = LocalOptimizer::new(config.optimizer, model.dim())?;
                let shard = shard.with_epoch_limit(config.epochs);
                Ok(WorkerState::new(k, &model, opt, shard, config.batch_size)
                    .with_gradient_noise(config.gradient_noise, substream(config.seed, streams::NOISE, k as u64)))
            })
            .collect::<Result<Vec<_>>>()?;

        Ok(Simulation {
            eval_set: dataset.subset(config.eval_subset, substream(config.seed, streams::EVAL, 0)),
            server: ParameterServer::new(initial),
            pending: vec![None; config.workers],
            queue: BinaryHeap::with_capacity(config.workers),
            delay_rng: ChaCha8Rng::seed_from_u64(substream(config.seed, streams::DELAY, 0)),
            rows: Vec::new(),
            initial_eval: None,
            last_eval: None,
            non_finite_streak: 0,
            diverged: false,
            halt: None,
            now: 0.0,
            config,
            model,
            workers,
        })
    }

    fn evaluate(&mut self) -> Result<Evaluation> {
        let eval = evaluate(&self.model, &self.server.central().params, &self.eval_set)?;
        if eval.loss.is_finite() {
            self.non_finite_streak = 0;
        } else {
            self.non_finite_streak += 1;
            self.diverged = true;
            if self.non_finite_streak >= self.config.divergence_patience {
                self.halt = Some(Halt::NonFiniteLoss);
            }
        }
        self.last_eval = Some(eval);
        Ok(eval)
    }

    fn initial_evaluation(&mut self) -> Result<()> {
        let eval = self.evaluate()?;
        self.initial_eval = Some(eval);
        self.rows.push(TraceRow {
            commit_index: 0,
            sim_time: 0.0,
            train_loss: Some(eval.loss),
            train_accuracy: eval.accuracy,
            tau: None,
            delta_norm: None,
            param_distance: None,
        });
        Ok(())
    }

    /// Worker `k` pulls at time `now` and computes its next round.
    fn schedule(&mut self, k: usize, now: f64) -> Result<()> {
        let pull = self.server.pull();
        match self.workers[k].round(&self.model, &self.config.strategy, pull) {
            Ok(Round::Committed { commit, steps }) => {
                let time = now + self.config.delay.duration(steps, &mut self.delay_rng);
                self.pending[k] = Some(commit);
                self.queue.push(Event { time, worker: k });
                Ok(())
            }
            Ok(Round::Exhausted) => Ok(()),
            Err(Error::NonFinite(_)) => {
                self.diverged = true;
                self.halt = Some(Halt::WorkerFault);
                Ok(())
            }
            Err(e) => Err(e),
        }
    }

    fn record(&mut self, applied: &Applied, time: f64) -> Result<()> {
        self.now = time;
        let entry = &applied.entry;
        let clock = entry.commit_index;
        if !(entry.post_norm <= self.config.divergence_threshold) {
            self.diverged = true;
        }
        if entry.post_norm > self.config.divergence_threshold {
            self.halt = Some(Halt::NormBailout);
        }
        let eval = if clock.is_multiple_of(self.config.eval_every) {
            Some(self.evaluate()?)
        } else {
            None
        };
        if self.halt.is_none() && self.config.max_commits.is_some_and(|max| clock >= max) {
            self.halt = Some(Halt::CommitLimit);
        }
        self.rows.push(TraceRow {
            commit_index: clock,
            sim_time: time,
            train_loss: eval.map(|e| e.loss),
            train_accuracy: eval.and_then(|e| e.accuracy),
            tau: Some(entry.tau),
            delta_norm: Some(entry.delta_norm),
            param_distance: Some(entry.param_distance),
        });
        Ok(())
    }

    fn finish(mut self) -> Result<RunResult> {
        let last = self.rows.last_mut().expect("initial row");
        if last.train_loss.is_none() {
            let eval = evaluate(&self.model, &self.server.central().params, &self.eval_set)?;
            let last = self.rows.last_mut().expect("initial row");
            last.train_loss = Some(eval.loss);
            last.train_accuracy = eval.accuracy;
            self.last_eval = Some(eval);
        }
        let diverged = self.diverged || self.server.diverged();
        let final_params = self.server.central().params.clone();
        Ok(RunResult {
            rows: self.rows,
            log: self.server.into_log(),
            final_params,
            diverged,
            halt: self.halt.unwrap_or(Halt::Completed),
            end_time: self.now,
            initial_eval: self.initial_eval.expect("initial evaluation"),
            final_eval: self.last_eval.expect("final evaluation"),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::Strategy;
    use rand::SeedableRng;

    fn quadratic_config(workers: usize, strategy: Strategy, lambda: usize) -> ExperimentConfig {
        let mut c = ExperimentConfig::new(
            ModelSpec::Quadratic {
                matrix: vec![vec![1.0, 0.0], vec![0.0, 4.0]],
                optimum: vec![0.0, 0.0],
                start: Some(vec![1.0, 1.0]),
            },
            DataSpec::Steps { count: 40 * workers },
            workers,
            StrategyConfig::new(strategy, lambda),
            OptimizerConfig::sgd(0.05),
            3,
        );
        c.epochs = 2;
        c
    }

    #[test]
    fn durations() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let homo = DelayModel::homogeneous(1.0);
        assert_eq!(homo.duration(15, &mut rng), 15.0);
        let flat = DelayModel {
            kind: DelayKind::Heterogeneous,
            base_round_time: 1.0,
            jitter: 0.0,
        };
        assert_eq!(flat.duration(15, &mut rng), 15.0);
        let jittery = DelayModel {
            jitter: 0.3,
            ..flat
        };
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..5).map(|_| jittery.duration(10, &mut rng)).collect::<Vec<_>>()
        };
        assert_eq!(draw(4), draw(4));
        assert!(draw(4).iter().all(|d| (7.0..=13.0).contains(d)));
    }

    #[test]
    fn delay_validation() {
        let bad = DelayModel {
            jitter: 0.1,
            ..DelayModel::homogeneous(1.0)
        };
        assert!(bad.validate().is_err());
        assert!(DelayModel::homogeneous(0.0).validate().is_err());
    }

    #[test]
    fn events_pop_by_time_then_worker() {
        let mut heap = BinaryHeap::new();
        for (time, worker) in [(2.0, 0), (1.0, 3), (1.0, 1), (0.5, 9)] {
            heap.push(Event { time, worker });
        }
        let order: Vec<_> = std::iter::from_fn(|| heap.pop()).map(|e| (e.time, e.worker)).collect();
        assert_eq!(order, vec![(0.5, 9), (1.0, 1), (1.0, 3), (2.0, 0)]);
    }

    #[test]
    fn single_worker_has_no_staleness() {
        let r = run(&quadratic_config(1, Strategy::Agn, 4)).unwrap();
        assert_eq!(r.halt, Halt::Completed);
        assert_eq!(r.log.len(), 20);
        assert!(r.log.iter().all(|e| e.tau == 0));
        assert!(r.final_eval.loss < r.initial_eval.loss);
    }

    #[test]
    fn round_robin_order_for_homogeneous_workers() {
        let r = run(&quadratic_config(4, Strategy::Downpour, 1)).unwrap();
        let order: Vec<usize> = r.log.iter().take(8).map(|e| e.worker).collect();
        assert_eq!(order, vec![0, 1, 2, 3, 0, 1, 2, 3]);
        let taus: Vec<u64> = r.log.iter().take(8).map(|e| e.tau).collect();
        assert_eq!(taus, vec![0, 1, 2, 3, 3, 3, 3, 3]);
    }

    #[test]
    fn commit_limit_halts() {
        let mut c = quadratic_config(2, Strategy::Agn, 1);
        c.max_commits = Some(5);
        let r = run(&c).unwrap();
        assert_eq!(r.halt, Halt::CommitLimit);
        assert_eq!(r.log.len(), 5);
        assert!(r.rows.last().unwrap().train_loss.is_some());
    }

    #[test]
    fn exploding_run_trips_the_bailout() {
        let mut c = quadratic_config(1, Strategy::Downpour, 1);
        c.optimizer = OptimizerConfig::sgd(3.0);
        let r = run(&c).unwrap();
        assert!(r.diverged);
        assert_eq!(r.halt, Halt::NormBailout);
    }

    #[test]
    fn shards_smaller_than_a_batch_are_rejected_up_front() {
        let mut c = quadratic_config(4, Strategy::Agn, 1);
        c.batch_size = 100;
        assert!(matches!(run(&c), Err(Error::Config(_))));
    }
}
