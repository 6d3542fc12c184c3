//! Differentiable test problems with hand-written loss and gradient.
//!
//! * quadratic bowl `0.5 (θ-θ*)ᵀ A (θ-θ*)`, which ignores its batch;
//! * logistic regression (a dense net without hidden layers);
//! * multilayer perceptron with sigmoid/tanh hidden units.
//!
//! Classifiers use sigmoid outputs with cross-entropy. With a single output
//! unit the target is the class (0 or 1); with `k > 1` outputs the target is
//! one-hot encoded and the per-output binary cross-entropies are summed.
//!
//! Dense parameters are laid out layer by layer, each layer as its weight
//! matrix (row-major, `out × in`) followed by its bias vector.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Batch;
use crate::error::{Error, Result};
use crate::params::ParamVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Sigmoid,
    Tanh,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Sigmoid => sigmoid(z),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the activation value.
    fn derivative_at(self, a: f64) -> f64 {
        match self {
            Activation::Sigmoid => a * (1.0 - a),
            Activation::Tanh => 1.0 - a * a,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Quadratic,
    LogisticRegression,
    Mlp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Quadratic {
    dim: usize,
    /// Row-major `dim × dim`, symmetric positive definite.
    matrix: Vec<f64>,
    optimum: ParamVector,
}

impl Quadratic {
    pub fn new(matrix: Vec<Vec<f64>>, optimum: ParamVector) -> Result<Self> {
        let dim = optimum.dim();
        if dim == 0 || matrix.len() != dim || matrix.iter().any(|row| row.len() != dim) {
            return Err(Error::config(format!(
                "quadratic: matrix must be {dim}×{dim} to match the optimum"
            )));
        }
        let flat: Vec<f64> = matrix.into_iter().flatten().collect();
        for i in 0..dim {
            for j in 0..i {
                if flat[i * dim + j] != flat[j * dim + i] {
                    return Err(Error::config("quadratic: matrix is not symmetric"));
                }
            }
        }
        if !cholesky_succeeds(&flat, dim) {
            return Err(Error::config("quadratic: matrix is not positive definite"));
        }
        Ok(Quadratic {
            dim,
            matrix: flat,
            optimum,
        })
    }

    /// `diag(diagonal)` with the given optimum.
    pub fn diagonal(diagonal: &[f64], optimum: ParamVector) -> Result<Self> {
        let n = diagonal.len();
        let matrix = (0..n)
            .map(|i| (0..n).map(|j| if i == j { diagonal[i] } else { 0.0 }).collect())
            .collect();
        Quadratic::new(matrix, optimum)
    }

    pub fn optimum(&self) -> &ParamVector {
        &self.optimum
    }

    fn apply_matrix(&self, v: &[f64]) -> Vec<f64> {
        (0..self.dim)
            .map(|i| {
                let row = &self.matrix[i * self.dim..(i + 1) * self.dim];
                row.iter().zip(v).fold(0.0, |acc, (a, x)| acc + a * x)
            })
            .collect()
    }
}

fn cholesky_succeeds(a: &[f64], n: usize) -> bool {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[i * n + j];
            for k in 0..j {
                sum -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if !(sum > 0.0) {
                    return false;
                }
                l[i * n + i] = sum.sqrt();
            } else {
                l[i * n + j] = sum / l[j * n + j];
            }
        }
    }
    true
}

/// Fully connected sigmoid-output network. `widths = [in, h1, ..., out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    widths: Vec<usize>,
    activation: Activation,
}

impl DenseNet {
    pub fn new(widths: Vec<usize>, activation: Activation) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::config(format!("invalid layer widths {widths:?}")));
        }
        Ok(DenseNet { widths, activation })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn dim(&self) -> usize {
        self.widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    fn outputs(&self) -> usize {
        *self.widths.last().unwrap()
    }

    fn target_of(&self, target: f64, o: usize) -> f64 {
        if self.outputs() == 1 {
            target
        } else if o == target as usize {
            1.0
        } else {
            0.0
        }
    }

    /// Fills `acts` with per-layer activations; the last entry holds logits.
    fn forward(&self, params: &[f64], x: &[f64], acts: &mut Vec<Vec<f64>>) {
        let layers = self.widths.len() - 1;
        acts.resize(layers + 1, Vec::new());
        acts[0].clear();
        acts[0].extend_from_slice(x);
        let mut offset = 0;
        for l in 0..layers {
            let (fan_in, fan_out) = (self.widths[l], self.widths[l + 1]);
            let weights = &params[offset..offset + fan_in * fan_out];
            let bias = &params[offset + fan_in * fan_out..offset + fan_in * fan_out + fan_out];
            offset += fan_in * fan_out + fan_out;
            let (prev, next) = acts.split_at_mut(l + 1);
            let input = &prev[l];
            let out = &mut next[0];
            out.clear();
            for o in 0..fan_out {
                let row = &weights[o * fan_in..(o + 1) * fan_in];
                let z = row.iter().zip(input).fold(bias[o], |acc, (w, a)| acc + w * a);
                out.push(if l + 1 == layers { z } else { self.activation.apply(z) });
            }
        }
    }

    fn sample_loss(&self, logits: &[f64], target: f64) -> f64 {
        logits
            .iter()
            .enumerate()
            .fold(0.0, |acc, (o, &z)| acc + softplus(z) - self.target_of(target, o) * z)
    }

    fn accumulate_gradient(
        &self,
        params: &[f64],
        acts: &[Vec<f64>],
        target: f64,
        grad: &mut [f64],
        scratch: &mut (Vec<f64>, Vec<f64>),
    ) {
        let layers = self.widths.len() - 1;
        let (delta, prev_delta) = scratch;
        delta.clear();
        delta.extend(
            acts[layers]
                .iter()
                .enumerate()
                .map(|(o, &z)| sigmoid(z) - self.target_of(target, o)),
        );
        let mut offset = self.dim();
        for l in (0..layers).rev() {
            let (fan_in, fan_out) = (self.widths[l], self.widths[l + 1]);
            offset -= fan_in * fan_out + fan_out;
            let input = &acts[l];
            {
                let (gw, gb) = grad[offset..offset + fan_in * fan_out + fan_out].split_at_mut(fan_in * fan_out);
                for o in 0..fan_out {
                    let d = delta[o];
                    for (g, a) in gw[o * fan_in..(o + 1) * fan_in].iter_mut().zip(input) {
                        *g += d * a;
                    }
                    gb[o] += d;
                }
            }
            if l > 0 {
                let weights = &params[offset..offset + fan_in * fan_out];
                prev_delta.clear();
                prev_delta.resize(fan_in, 0.0);
                for o in 0..fan_out {
                    let d = delta[o];
                    for (p, w) in prev_delta.iter_mut().zip(&weights[o * fan_in..(o + 1) * fan_in]) {
                        *p += w * d;
                    }
                }
                for (p, a) in prev_delta.iter_mut().zip(input) {
                    *p *= self.activation.derivative_at(*a);
                }
                std::mem::swap(delta, prev_delta);
            }
        }
    }

    fn predict(&self, params: &[f64], x: &[f64]) -> usize {
        let mut acts = Vec::new();
        self.forward(params, x, &mut acts);
        let logits = acts.last().unwrap();
        if logits.len() == 1 {
            usize::from(logits[0] >= 0.0)
        } else {
            let mut best = 0;
            for (o, &z) in logits.iter().enumerate() {
                if z > logits[best] {
                    best = o;
                }
            }
            best
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Quadratic(Quadratic),
    LogisticRegression(DenseNet),
    Mlp(DenseNet),
}

impl Model {
    pub fn logistic_regression(features: usize) -> Result<Self> {
        Ok(Model::LogisticRegression(DenseNet::new(
            vec![features, 1],
            Activation::Sigmoid,
        )?))
    }

    pub fn mlp(widths: Vec<usize>, activation: Activation) -> Result<Self> {
        if widths.len() < 3 {
            return Err(Error::config("mlp needs at least one hidden layer"));
        }
        Ok(Model::Mlp(DenseNet::new(widths, activation)?))
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            Model::Quadratic(_) => ModelKind::Quadratic,
            Model::LogisticRegression(_) => ModelKind::LogisticRegression,
            Model::Mlp(_) => ModelKind::Mlp,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Model::Quadratic(q) => q.dim,
            Model::LogisticRegression(net) | Model::Mlp(net) => net.dim(),
        }
    }

    pub fn is_classifier(&self) -> bool {
        !matches!(self, Model::Quadratic(_))
    }

    /// Seeded initial parameters. Dense weights and biases are drawn from
    /// uniform(-r, r) with r = 1/sqrt(fan-in); the quadratic starts at
    /// θ* + uniform(-1, 1) per coordinate.
    pub fn init_params(&self, seed: u64) -> ParamVector {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        match self {
            Model::Quadratic(q) => ParamVector::from_vec(
                q.optimum
                    .as_slice()
                    .iter()
                    .map(|c| c + rng.random_range(-1.0..1.0))
                    .collect(),
            ),
            Model::LogisticRegression(net) | Model::Mlp(net) => {
                let mut values = Vec::with_capacity(net.dim());
                for w in net.widths.windows(2) {
                    let r = 1.0 / (w[0] as f64).sqrt();
                    for _ in 0..w[0] * w[1] + w[1] {
                        values.push(rng.random_range(-r..r));
                    }
                }
                ParamVector::from_vec(values)
            }
        }
    }

    fn check(&self, params: &ParamVector, batch: &Batch<'_>) -> Result<()> {
        params.check_dim(self.dim(), "model parameters")?;
        if batch.is_empty() {
            return Err(Error::config("empty batch"));
        }
        if let Model::LogisticRegression(net) | Model::Mlp(net) = self {
            let want = net.widths[0];
            if let Some(x) = batch.inputs().find(|x| x.len() != want) {
                return Err(Error::config(format!(
                    "input dimension mismatch (model expects {want}, got {})",
                    x.len()
                )));
            }
        }
        Ok(())
    }

    /// Mean loss over the batch.
    pub fn loss(&self, params: &ParamVector, batch: &Batch<'_>) -> Result<f64> {
        self.check(params, batch)?;
        match self {
            Model::Quadratic(q) => {
                let d = params.sub(&q.optimum);
                let ad = q.apply_matrix(d.as_slice());
                Ok(0.5 * d.as_slice().iter().zip(&ad).fold(0.0, |acc, (x, y)| acc + x * y))
            }
            Model::LogisticRegression(net) | Model::Mlp(net) => {
                let mut acts = Vec::new();
                let mut total = 0.0;
                for s in batch.samples() {
                    net.forward(params.as_slice(), &s.features, &mut acts);
                    total += net.sample_loss(acts.last().unwrap(), s.target);
                }
                Ok(total / batch.size() as f64)
            }
        }
    }

    /// Mean gradient `(1/m) Σ_j ∇L(θ; x_j; y_j)` over the batch.
    pub fn gradient(&self, params: &ParamVector, batch: &Batch<'_>) -> Result<ParamVector> {
        self.check(params, batch)?;
        match self {
            Model::Quadratic(q) => {
                let d = params.sub(&q.optimum);
                Ok(ParamVector::from_vec(q.apply_matrix(d.as_slice())))
            }
            Model::LogisticRegression(net) | Model::Mlp(net) => {
                let mut grad = vec![0.0; net.dim()];
                let mut acts = Vec::new();
                let mut scratch = (Vec::new(), Vec::new());
                for s in batch.samples() {
                    net.forward(params.as_slice(), &s.features, &mut acts);
                    net.accumulate_gradient(params.as_slice(), &acts, s.target, &mut grad, &mut scratch);
                }
                let m = batch.size() as f64;
                grad.iter_mut().for_each(|g| *g /= m);
                Ok(ParamVector::from_vec(grad))
            }
        }
    }

    /// Predicted class, or `None` for non-classifiers.
    pub fn predict(&self, params: &ParamVector, x: &[f64]) -> Option<usize> {
        match self {
            Model::Quadratic(_) => None,
            Model::LogisticRegression(net) | Model::Mlp(net) => Some(net.predict(params.as_slice(), x)),
        }
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}
