//! Parameter-server state machine: FIFO commits, snapshot pulls, and a
//! per-commit log of staleness and parameter drift.

use crate::error::{Error, Result};
use crate::optim::{dynsgd_scale, Strategy};
use crate::params::ParamVector;

/// The server's parameterization and the number of commits applied to it.
#[derive(Debug, Clone, PartialEq)]
pub struct CentralVariable {
    pub params: ParamVector,
    pub clock: u64,
}

/// Snapshot handed to a worker.
#[derive(Debug, Clone, PartialEq)]
pub struct Pull {
    pub params: ParamVector,
    pub clock: u64,
}

/// A worker delta tagged with the server clock (and parameters) it was computed from.
#[derive(Debug, Clone, PartialEq)]
pub struct Commit {
    pub worker: usize,
    pub delta: ParamVector,
    pub base_clock: u64,
    pub base_params: ParamVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogEntry {
    /// 1-based index of the commit (equals the clock after application).
    pub commit_index: u64,
    pub sim_time: f64,
    pub worker: usize,
    /// Commits applied between this commit's pull and its application.
    pub tau: u64,
    /// Norm of the delta actually applied.
    pub delta_norm: f64,
    /// Norm of the delta as sent by the worker.
    pub raw_delta_norm: f64,
    /// `‖θ̃ at application − θ̃ at pull‖`, before this commit is applied.
    pub param_distance: f64,
    pub pre_norm: f64,
    pub post_norm: f64,
}

/// Result of applying one commit.
#[derive(Debug, Clone)]
pub struct Applied {
    pub entry: LogEntry,
    /// The delta added to θ̃ (after any staleness scaling).
    pub delta: ParamVector,
}

#[derive(Debug, Clone)]
pub struct ParameterServer {
    central: CentralVariable,
    log: Vec<LogEntry>,
    diverged: bool,
}

impl ParameterServer {
    pub fn new(initial: ParamVector) -> Self {
        ParameterServer {
            central: CentralVariable {
                params: initial,
                clock: 0,
            },
            log: Vec::new(),
            diverged: false,
        }
    }

    pub fn pull(&self) -> Pull {
        Pull {
            params: self.central.params.clone(),
            clock: self.central.clock,
        }
    }

    pub fn central(&self) -> &CentralVariable {
        &self.central
    }

    pub fn clock(&self) -> u64 {
        self.central.clock
    }

    pub fn log(&self) -> &[LogEntry] {
        &self.log
    }

    pub fn into_log(self) -> Vec<LogEntry> {
        self.log
    }

    /// Set once θ̃ has become non-finite.
    pub fn diverged(&self) -> bool {
        self.diverged
    }

    /// `θ̃ += delta` (scaled by `1/(tau+1)` under dynsgd), `clock += 1`.
    pub fn apply_commit(&mut self, commit: &Commit, strategy: Strategy, sim_time: f64) -> Result<Applied> {
        let dim = self.central.params.dim();
        commit.delta.check_dim(dim, "commit delta")?;
        commit.base_params.check_dim(dim, "commit base parameters")?;
        if commit.base_clock > self.central.clock {
            return Err(Error::config(format!(
                "commit from worker {} claims base clock {} ahead of server clock {}",
                commit.worker, commit.base_clock, self.central.clock
            )));
        }
        let tau = self.central.clock - commit.base_clock;
        let delta = match strategy {
            Strategy::Dynsgd => dynsgd_scale(&commit.delta, tau),
            _ => commit.delta.clone(),
        };
        let pre_norm = self.central.params.norm();
        let param_distance = self.central.params.sub(&commit.base_params).norm();
        self.central.params.add_assign(&delta);
        self.central.clock += 1;
        if !self.central.params.is_finite() {
            self.diverged = true;
        }
        let entry = LogEntry {
            commit_index: self.central.clock,
            sim_time,
            worker: commit.worker,
            tau,
            delta_norm: delta.norm(),
            raw_delta_norm: commit.delta.norm(),
            param_distance,
            pre_norm,
            post_norm: self.central.params.norm(),
        };
        self.log.push(entry.clone());
        Ok(Applied { entry, delta })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn commit(pull: &Pull, delta: &[f64]) -> Commit {
        Commit {
            worker: 0,
            delta: ParamVector::from_vec(delta.to_vec()),
            base_clock: pull.clock,
            base_params: pull.params.clone(),
        }
    }

    #[test]
    fn fresh_pull() {
        let s = ParameterServer::new(ParamVector::zeros(2));
        let p = s.pull();
        assert_eq!(p.params, ParamVector::zeros(2));
        assert_eq!(p.clock, 0);
        assert_eq!(s.pull(), p);
    }

    #[test]
    fn apply_adds_and_counts() {
        let mut s = ParameterServer::new(ParamVector::from_vec(vec![1.0, 1.0]));
        let p = s.pull();
        let applied = s.apply_commit(&commit(&p, &[-0.5, 0.25]), Strategy::Agn, 0.0).unwrap();
        assert_eq!(s.central().params.as_slice(), &[0.5, 1.25]);
        assert_eq!(s.clock(), 1);
        assert_eq!(applied.entry.tau, 0);
        assert_eq!(applied.entry.param_distance, 0.0);
        for _ in 0..2 {
            let p = s.pull();
            s.apply_commit(&commit(&p, &[0.0, 0.0]), Strategy::Agn, 0.0).unwrap();
        }
        assert_eq!(s.pull().clock, 3);
    }

    #[test]
    fn staleness_counts_interleaved_commits() {
        let mut s = ParameterServer::new(ParamVector::zeros(1));
        let stale = s.pull();
        for _ in 0..3 {
            let p = s.pull();
            s.apply_commit(&commit(&p, &[1.0]), Strategy::Agn, 0.0).unwrap();
        }
        let a = s.apply_commit(&commit(&stale, &[1.0]), Strategy::Agn, 0.0).unwrap();
        assert_eq!(a.entry.tau, 3);
        assert_eq!(a.entry.param_distance, 3.0);
    }

    #[test]
    fn dynsgd_scales_by_staleness() {
        let mut s = ParameterServer::new(ParamVector::zeros(1));
        let stale = s.pull();
        let p = s.pull();
        s.apply_commit(&commit(&p, &[4.0]), Strategy::Dynsgd, 0.0).unwrap();
        assert_eq!(s.central().params.as_slice(), &[4.0]);
        let a = s.apply_commit(&commit(&stale, &[4.0]), Strategy::Dynsgd, 0.0).unwrap();
        assert_eq!(a.delta.as_slice(), &[2.0]);
        assert_eq!(a.entry.raw_delta_norm, 4.0);
        assert_eq!(s.central().params.as_slice(), &[6.0]);
    }

    #[test]
    fn errors_and_divergence_flag() {
        let mut s = ParameterServer::new(ParamVector::zeros(2));
        let p = s.pull();
        let bad = commit(&p, &[1.0]);
        assert!(matches!(
            s.apply_commit(&Commit { base_params: p.params.clone(), ..bad }, Strategy::Agn, 0.0),
            Err(Error::Config(_))
        ));
        let future = Commit {
            base_clock: 5,
            ..commit(&p, &[0.0, 0.0])
        };
        assert!(s.apply_commit(&future, Strategy::Agn, 0.0).is_err());
        s.apply_commit(&commit(&p, &[f64::INFINITY, 0.0]), Strategy::Agn, 0.0).unwrap();
        assert!(s.diverged());
    }
}
