//! Scheduler-level invariants: determinism, staleness law, time-scaling
//! invariance and equivalence with a sequential loop.

use std::sync::Arc;

use agn_sim::data;
use agn_sim::metrics::staleness_stats;
use agn_sim::models::Model;
use agn_sim::optim::{LocalOptimizer, OptimizerConfig, Round, Strategy, StrategyConfig, WorkerState};
use agn_sim::server::ParameterServer;
use agn_sim::sim::{self, streams, DataSpec, DelayKind, DelayModel, ExperimentConfig, ModelSpec};
use agn_sim::substream;
use proptest::prelude::*;

fn logistic_config(workers: usize, strategy: Strategy, lambda: usize, seed: u64) -> ExperimentConfig {
    let mut c = ExperimentConfig::new(
        ModelSpec::LogisticRegression,
        DataSpec::TwoGaussians { count: 480, noise: 1.0 },
        workers,
        StrategyConfig::new(strategy, lambda),
        OptimizerConfig::adam(0.05),
        seed,
    );
    c.batch_size = 8;
    c.epochs = 2;
    c.eval_every = 3;
    c.gradient_noise = 0.01;
    c
}

#[test]
fn identical_configs_give_identical_results() {
    let mut c = logistic_config(3, Strategy::Agn, 4, 9);
    c.delay = DelayModel {
        kind: DelayKind::Heterogeneous,
        base_round_time: 1.0,
        jitter: 0.4,
    };
    let a = sim::run(&c).unwrap();
    let b = sim::run(&c).unwrap();
    assert_eq!(a.rows, b.rows);
    assert_eq!(a.log, b.log);
    assert_eq!(a.final_params, b.final_params);
    let other = sim::run(&logistic_config(3, Strategy::Agn, 4, 10)).unwrap();
    assert_ne!(a.final_params, other.final_params);
}

/// The sequential oracle: one worker, one server, pull-round-commit in a loop.
fn sequential(config: &ExperimentConfig) -> agn_sim::ParamVector {
    let dataset = Arc::new(config.data.load(config.seed).unwrap());
    let model = config.model.build(&dataset).unwrap();
    let shard = data::shard(&dataset, 1, substream(config.seed, streams::SHARD, 0))
        .unwrap()
        .remove(0)
        .with_epoch_limit(config.epochs);
    let opt = LocalOptimizer::new(config.optimizer, model.dim()).unwrap();
    let mut worker = WorkerState::new(0, &model, opt, shard, config.batch_size)
        .with_gradient_noise(config.gradient_noise, substream(config.seed, streams::NOISE, 0));
    let mut server = ParameterServer::new(model.init_params(substream(config.seed, streams::INIT, 0)));
    while let Round::Committed { commit, .. } = worker.round(&model, &config.strategy, server.pull()).unwrap() {
        server.apply_commit(&commit, config.strategy.strategy, 0.0).unwrap();
    }
    server.central().params.clone()
}

#[test]
fn single_worker_simulation_equals_sequential_loop() {
    for (strategy, lambda) in [
        (Strategy::Agn, 5),
        (Strategy::Downpour, 1),
        (Strategy::DownpourAccumulated, 3),
        (Strategy::Aeasgd, 4),
        (Strategy::Dynsgd, 2),
    ] {
        let c = logistic_config(1, strategy, lambda, 4);
        let r = sim::run(&c).unwrap();
        assert!(r.log.iter().all(|e| e.tau == 0));
        assert_eq!(r.final_params, sequential(&c), "{strategy}");
    }
}

#[test]
fn agn_with_lambda_one_is_downpour() {
    for n in [1, 4] {
        let a = sim::run(&logistic_config(n, Strategy::Agn, 1, 2)).unwrap();
        let b = sim::run(&logistic_config(n, Strategy::Downpour, 1, 2)).unwrap();
        assert_eq!(a.log, b.log);
        assert_eq!(a.final_params, b.final_params);
    }
}

fn steps_config(workers: usize, per_worker: usize, base_round_time: f64) -> ExperimentConfig {
    let mut c = ExperimentConfig::new(
        ModelSpec::Quadratic {
            matrix: vec![vec![1.0, 0.0], vec![0.0, 2.0]],
            optimum: vec![0.0, 0.0],
            start: Some(vec![1.0, 1.0]),
        },
        DataSpec::Steps {
            count: workers * per_worker,
        },
        workers,
        StrategyConfig::new(Strategy::Downpour, 1),
        OptimizerConfig::sgd(0.01),
        1,
    );
    c.delay = DelayModel::homogeneous(base_round_time);
    c.eval_every = 50;
    c
}

#[test]
fn homogeneous_staleness_is_exactly_n_minus_one_after_warm_up() {
    for n in [2, 3, 5, 8] {
        let r = sim::run(&steps_config(n, 100, 1.0)).unwrap();
        assert_eq!(r.log.len(), 100 * n);
        for (i, e) in r.log.iter().enumerate() {
            let expected = if i < n { i as u64 } else { n as u64 - 1 };
            assert_eq!(e.tau, expected, "n={n} commit {i}");
        }
        let mean = staleness_stats(&r.log).unwrap().mean_tau;
        let n1 = n as f64 - 1.0;
        assert!(mean <= n1 && mean >= n1 - 0.1, "n={n}: {mean}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn scaling_round_time_keeps_commit_order(n in 1usize..6, factor in 0.01f64..100.0, jitter_seed: u8) {
        let base = steps_config(n, 20, 1.0);
        let scaled = steps_config(n, 20, factor);
        let a = sim::run(&base).unwrap();
        let b = sim::run(&scaled).unwrap();
        let order = |r: &sim::RunResult| r.log.iter().map(|e| (e.worker, e.tau)).collect::<Vec<_>>();
        prop_assert_eq!(order(&a), order(&b));
        prop_assert_eq!(a.final_params, b.final_params);

        let mut het = steps_config(n, 20, 1.0);
        het.seed = u64::from(jitter_seed);
        het.delay = DelayModel { kind: DelayKind::Heterogeneous, base_round_time: 1.0, jitter: 0.3 };
        let mut het2 = het.clone();
        het2.delay.base_round_time = 4.0;
        prop_assert_eq!(order(&sim::run(&het).unwrap()), order(&sim::run(&het2).unwrap()));
    }

    #[test]
    fn staleness_counts_interleaved_commits(n in 1usize..6, jitter in 0.0f64..0.9, seed: u8) {
        let mut c = steps_config(n, 15, 1.0);
        c.seed = u64::from(seed);
        c.delay = DelayModel { kind: DelayKind::Heterogeneous, base_round_time: 1.0, jitter };
        let mut last_pull = vec![0u64; n];
        let r = sim::run_with_observer(&c, |commit, applied| {
            assert_eq!(applied.entry.tau, applied.entry.commit_index - 1 - commit.base_clock);
            assert_eq!(commit.base_clock, last_pull[commit.worker]);
            last_pull[commit.worker] = applied.entry.commit_index;
        }).unwrap();
        prop_assert_eq!(r.log.len(), 15 * n);
    }
}

#[test]
fn model_spec_builds_output_width_from_classes() {
    let ds = sim::DataSpec::TwoMoons { count: 10, noise: 0.0 }.load(0).unwrap();
    let spec = ModelSpec::Mlp {
        hidden: vec![3],
        activation: agn_sim::models::Activation::Tanh,
    };
    match spec.build(&ds).unwrap() {
        Model::Mlp(net) => assert_eq!(net.widths(), &[2, 3, 1]),
        other => panic!("{other:?}"),
    }
}
