//! Local optimizers and the per-worker round procedures.
//!
//! A round starts from a pull of the central variable, runs up to `lambda`
//! local steps on the worker's shard and produces one [`Commit`]. The
//! strategies differ only in how the commit is formed:
//!
//! | strategy               | commit                                   |
//! |------------------------|------------------------------------------|
//! | `agn`                  | accumulated update / steps taken          |
//! | `downpour`             | single update (`lambda` must be 1)        |
//! | `downpour-accumulated` | accumulated update                        |
//! | `dynsgd`               | accumulated update, scaled by the server  |
//! | `aeasgd`               | elastic difference `eta*rho*(θ_k - θ̃)`    |

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::Shard;
use crate::error::{Error, Result};
use crate::models::Model;
use crate::params::ParamVector;
use crate::server::{Commit, Pull};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub eta: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_epsilon() -> f64 {
    1e-8
}

impl OptimizerConfig {
    pub fn sgd(eta: f64) -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Sgd,
            eta,
            beta1: default_beta1(),
            beta2: default_beta2(),
            epsilon: default_epsilon(),
        }
    }

    pub fn adam(eta: f64) -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Adam,
            ..OptimizerConfig::sgd(eta)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::config(format!("learning rate must be positive, got {}", self.eta)));
        }
        if self.kind == OptimizerKind::Adam
            && !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2) && self.epsilon > 0.0)
        {
            return Err(Error::config("adam: need 0 <= beta1, beta2 < 1 and epsilon > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct AdamState {
    first: ParamVector,
    second: ParamVector,
    step: u64,
}

/// Stateful local update rule producing `g` from a gradient.
#[derive(Debug, Clone)]
pub struct LocalOptimizer {
    config: OptimizerConfig,
    adam: Option<AdamState>,
}

impl LocalOptimizer {
    pub fn new(config: OptimizerConfig, dim: usize) -> Result<Self> {
        config.validate()?;
        let adam = (config.kind == OptimizerKind::Adam).then(|| AdamState {
            first: ParamVector::zeros(dim),
            second: ParamVector::zeros(dim),
            step: 0,
        });
        Ok(LocalOptimizer { config, adam })
    }

    pub fn eta(&self) -> f64 {
        self.config.eta
    }

    /// Adam step counter (0 for SGD).
    pub fn steps_taken(&self) -> u64 {
        self.adam.as_ref().map_or(0, |a| a.step)
    }

    /// Adam first-moment vector, if any.
    pub fn first_moment(&self) -> Option<&ParamVector> {
        self.adam.as_ref().map(|a| &a.first)
    }

    /// The update `g` for `grad`: `-eta * grad` for SGD, the bias-corrected
    /// `-eta * m̂ / (sqrt(v̂) + eps)` for Adam.
    pub fn step(&mut self, grad: &ParamVector) -> Result<ParamVector> {
        grad.check_finite("gradient")?;
        let eta = self.config.eta;
        match &mut self.adam {
            None => Ok(grad.scaled(-eta)),
            Some(state) => {
                grad.check_dim(state.first.dim(), "adam gradient")?;
                let (b1, b2, eps) = (self.config.beta1, self.config.beta2, self.config.epsilon);
                state.step += 1;
                let t = state.step as i32;
                let c1 = 1.0 - b1.powi(t);
                let c2 = 1.0 - b2.powi(t);
                let update = grad
                    .as_slice()
                    .iter()
                    .zip(state.first.as_mut_slice())
                    .zip(state.second.as_mut_slice())
                    .map(|((&g, m), v)| {
                        *m = b1 * *m + (1.0 - b1) * g;
                        *v = b2 * *v + (1.0 - b2) * g * g;
                        let m_hat = *m / c1;
                        let v_hat = *v / c2;
                        -eta * m_hat / (v_hat.sqrt() + eps)
                    })
                    .collect();
                Ok(ParamVector::from_vec(update))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    Agn,
    Downpour,
    DownpourAccumulated,
    Aeasgd,
    Dynsgd,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::Agn => "agn",
            Strategy::Downpour => "downpour",
            Strategy::DownpourAccumulated => "downpour-accumulated",
            Strategy::Aeasgd => "aeasgd",
            Strategy::Dynsgd => "dynsgd",
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            Strategy::Agn,
            Strategy::Downpour,
            Strategy::DownpourAccumulated,
            Strategy::Aeasgd,
            Strategy::Dynsgd,
        ]
        .into_iter()
        .find(|st| st.name() == s)
        .ok_or_else(|| Error::config(format!("unknown strategy `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StrategyConfig {
    pub strategy: Strategy,
    /// Local steps per commit.
    pub lambda: usize,
    /// Elastic coefficient; the exchanged fraction is `eta * rho`.
    pub rho: f64,
}

impl StrategyConfig {
    pub fn new(strategy: Strategy, lambda: usize) -> Self {
        StrategyConfig {
            strategy,
            lambda,
            rho: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lambda == 0 {
            return Err(Error::config("lambda must be at least 1"));
        }
        if self.strategy == Strategy::Downpour && self.lambda != 1 {
            return Err(Error::config(format!("downpour requires lambda = 1, got {}", self.lambda)));
        }
        if self.strategy == Strategy::Aeasgd && !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(Error::config(format!("aeasgd requires rho > 0, got {}", self.rho)));
        }
        Ok(())
    }
}

/// Seeded additive Gaussian noise on every local gradient.
#[derive(Debug, Clone)]
struct GradientNoise {
    sigma: f64,
    rng: ChaCha8Rng,
}

impl GradientNoise {
    fn perturb(&mut self, grad: &mut ParamVector) {
        for g in grad.as_mut_slice() {
            let z: f64 = StandardNormal.sample(&mut self.rng);
            *g += self.sigma * z;
        }
    }
}

/// Outcome of a worker round.
#[derive(Debug, Clone)]
pub enum Round {
    /// `steps` local steps were taken (fewer than lambda only at the end of the shard).
    Committed { commit: Commit, steps: usize },
    /// The shard ran out before any step of this round.
    Exhausted,
}

/// One logical worker: local replica, accumulator, optimizer and data.
#[derive(Debug, Clone)]
pub struct WorkerState {
    id: usize,
    params: ParamVector,
    pulled: ParamVector,
    accumulator: ParamVector,
    local_step: usize,
    opt: LocalOptimizer,
    shard: Shard,
    base_clock: u64,
    batch_size: usize,
    noise: Option<GradientNoise>,
    started: bool,
}

impl WorkerState {
    pub fn new(id: usize, model: &Model, opt: LocalOptimizer, shard: Shard, batch_size: usize) -> Self {
        let dim = model.dim();
        WorkerState {
            id,
            params: ParamVector::zeros(dim),
            pulled: ParamVector::zeros(dim),
            accumulator: ParamVector::zeros(dim),
            local_step: 0,
            opt,
            shard,
            base_clock: 0,
            batch_size,
            noise: None,
            started: false,
        }
    }

    /// Adds seeded N(0, sigma²) noise to every local gradient.
    pub fn with_gradient_noise(mut self, sigma: f64, seed: u64) -> Self {
        if sigma > 0.0 {
            self.noise = Some(GradientNoise {
                sigma,
                rng: ChaCha8Rng::seed_from_u64(seed),
            });
        }
        self
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn local_step(&self) -> usize {
        self.local_step
    }

    pub fn optimizer(&self) -> &LocalOptimizer {
        &self.opt
    }

    pub fn shard(&self) -> &Shard {
        &self.shard
    }

    /// Stores the pull. Replicas that restart from the center (everything but
    /// aeasgd after its first round) are overwritten with it.
    fn receive(&mut self, pull: Pull, reset_replica: bool) {
        if reset_replica || !self.started {
            self.params.clone_from(&pull.params);
        }
        self.started = true;
        self.pulled = pull.params;
        self.base_clock = pull.clock;
        self.accumulator.fill(0.0);
        self.local_step = 0;
    }

    /// Up to `lambda` steps of {fetch batch, g = opt(grad), a += g, θ_k += g}.
    fn explore(&mut self, model: &Model, lambda: usize) -> Result<usize> {
        while self.local_step < lambda {
            let Some(batch) = self.shard.next_minibatch(self.batch_size)? else {
                break;
            };
            let mut grad = model.gradient(&self.params, &batch)?;
            if let Some(noise) = &mut self.noise {
                noise.perturb(&mut grad);
            }
            let g = self.opt.step(&grad)?;
            self.accumulator.add_assign(&g);
            self.params.add_assign(&g);
            self.local_step += 1;
        }
        Ok(self.local_step)
    }

    fn commit(&self, delta: ParamVector) -> Commit {
        Commit {
            worker: self.id,
            delta,
            base_clock: self.base_clock,
            base_params: self.pulled.clone(),
        }
    }

    /// Runs one round of `config.strategy` from `pull`.
    pub fn round(&mut self, model: &Model, config: &StrategyConfig, pull: Pull) -> Result<Round> {
        match config.strategy {
            Strategy::Agn => agn_round(self, model, config.lambda, pull),
            Strategy::Downpour => downpour_round(self, model, pull),
            Strategy::DownpourAccumulated | Strategy::Dynsgd => {
                downpour_accumulated_round(self, model, config.lambda, pull)
            }
            Strategy::Aeasgd => aeasgd_round(self, model, config.lambda, config.rho, pull),
        }
    }
}

/// Accumulated gradient normalization: commit the mean of the local updates.
/// A round cut short by the end of the shard is normalized by the steps it took.
pub fn agn_round(w: &mut WorkerState, model: &Model, lambda: usize, pull: Pull) -> Result<Round> {
    w.receive(pull, true);
    let steps = w.explore(model, lambda)?;
    if steps == 0 {
        return Ok(Round::Exhausted);
    }
    let delta = w.accumulator.divided(steps as f64);
    Ok(Round::Committed {
        commit: w.commit(delta),
        steps,
    })
}

/// One local update, committed as is.
pub fn downpour_round(w: &mut WorkerState, model: &Model, pull: Pull) -> Result<Round> {
    agn_round(w, model, 1, pull)
}

/// Commits the raw sum of `lambda` local updates.
pub fn downpour_accumulated_round(w: &mut WorkerState, model: &Model, lambda: usize, pull: Pull) -> Result<Round> {
    w.receive(pull, true);
    let steps = w.explore(model, lambda)?;
    if steps == 0 {
        return Ok(Round::Exhausted);
    }
    let delta = w.accumulator.clone();
    Ok(Round::Committed {
        commit: w.commit(delta),
        steps,
    })
}

/// Asynchronous elastic averaging: free exploration, then an elastic exchange
/// `e = eta*rho*(θ_k - θ̃_pulled)`; the worker moves by `-e`, the commit is `+e`.
pub fn aeasgd_round(w: &mut WorkerState, model: &Model, lambda: usize, rho: f64, pull: Pull) -> Result<Round> {
    w.receive(pull, false);
    let steps = w.explore(model, lambda)?;
    if steps == 0 {
        return Ok(Round::Exhausted);
    }
    let alpha = w.opt.eta() * rho;
    let elastic = w.params.sub(&w.pulled).scaled(alpha);
    w.params.sub_assign(&elastic);
    Ok(Round::Committed {
        commit: w.commit(elastic),
        steps,
    })
}

/// Staleness-aware damping: `delta / (tau + 1)`.
pub fn dynsgd_scale(delta: &ParamVector, tau: u64) -> ParamVector {
    delta.divided((tau + 1) as f64)
}
