//! Seeded search for a 2-D noisy quadratic on which asynchrony alone decides
//! convergence:
//!
//! * downpour with n = 10 converges while n = 20 (same eta) diverges;
//! * downpour-accumulated with lambda = 20 diverges while agn with
//!   lambda = 20 converges (n = 10, same eta).
//!
//! "Converges" means the final loss is below a tenth of the initial loss
//! without tripping the divergence flag. Conditioning is scanned in
//! increasing order; for the first conditioning with any passing learning
//! rate, the median passing rate is printed as a config file; the
//! acceptance fixture
//! `tests/fixtures/divergence_instance.toml` was produced by
//!
//! ```text
//! cargo run --release --example divergence_search > tests/fixtures/divergence_instance.toml
//! ```

use agn_sim::config::{parse_config_str, GridSpec};
use agn_sim::optim::Strategy;
use agn_sim::sim;

const SEED: u64 = 2017;
const STEPS_PER_WORKER: usize = 2000;
const NOISE: f64 = 0.1;

fn base(condition: f64, eta: f64) -> GridSpec {
    let text = format!(
        r#"
[model]
kind = "quadratic"
matrix = [[1.0, 0.0], [0.0, {condition:?}]]
optimum = [0.0, 0.0]
start = [1.0, 1.0]

[data]
kind = "steps"
count = {count}

[optimizer]
kind = "sgd"
eta = {eta:?}

[run]
batch_size = 1
eval_every = 10
gradient_noise = {NOISE:?}

[sweep]
n = [10]
lambda = [1]
strategy = ["downpour"]
seed = [{SEED}]
"#,
        count = STEPS_PER_WORKER * 10
    );
    parse_config_str(&text).expect("search template parses")
}

/// `(converged, diverged)` for one variant of the instance.
fn outcome(grid: &GridSpec, n: usize, strategy: Strategy, lambda: usize) -> (bool, bool) {
    let mut g = grid.clone();
    g.sweep_n = vec![n];
    g.sweep_lambda = vec![lambda];
    g.strategies = vec![strategy];
    // every worker sees the same number of local steps regardless of n
    if let sim::DataSpec::Steps { count } = &mut g.data {
        *count = STEPS_PER_WORKER * n;
    }
    let run = &g.runs()[0];
    let r = sim::run(&run.config).expect("valid search config");
    let converged = !r.diverged && r.final_eval.loss < 0.1 * r.initial_eval.loss;
    (converged, r.diverged)
}

fn main() {
    for condition in [10.0, 25.0, 50.0, 100.0] {
        let mut passing = Vec::new();
        for step in 1..=40 {
            let eta = f64::from(step) * 0.005 / condition;
            let grid = base(condition, eta);
            let checks = [
                outcome(&grid, 10, Strategy::Downpour, 1).0,
                outcome(&grid, 20, Strategy::Downpour, 1).1,
                outcome(&grid, 10, Strategy::DownpourAccumulated, 20).1,
                outcome(&grid, 10, Strategy::Agn, 20).0,
            ];
            eprintln!("condition={condition} eta={eta:.6} checks={checks:?}");
            if checks.iter().all(|&c| c) {
                passing.push(eta);
            }
        }
        if !passing.is_empty() {
            let eta = passing[passing.len() / 2];
            let grid = base(condition, eta);
            let run = &grid.runs()[0];
            println!("# divergence showcase instance found by examples/divergence_search.rs");
            println!("# variants keep {STEPS_PER_WORKER} local steps per worker: data.count = {STEPS_PER_WORKER} * n");
            println!(
                "# condition = {condition}, eta * h_max = {:.4}, passing eta range [{}, {}]",
                eta * condition,
                passing[0],
                passing[passing.len() - 1]
            );
            print!("{}", grid.manifest(run).expect("manifest"));
            return;
        }
    }
    eprintln!("no instance found");
    std::process::exit(1);
}
