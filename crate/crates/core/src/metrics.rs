//! Run traces, evaluation, staleness statistics and temporal efficiency.
//!
//! Temporal efficiency compares two runs by the area under their metric
//! curves over the minimal shared training time `m_shared` (not to be
//! confused with the mini-batch size):
//!
//! ```text
//! E(a, b) = ∫₀^m f_a(t) dt / ∫₀^m f_b(t) dt,   m = min(end_a, end_b)
//! ```

use std::collections::BTreeMap;

use crate::data::{Batch, Dataset};
use crate::error::{Error, Result};
use crate::models::Model;
use crate::params::ParamVector;
use crate::server::LogEntry;

/// Time-stamped metric series with strictly increasing times.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    metric: String,
    points: Vec<(f64, f64)>,
}

impl Trace {
    pub fn new(metric: impl Into<String>) -> Self {
        Trace {
            metric: metric.into(),
            points: Vec::new(),
        }
    }

    /// Builds a trace from `(time, value)` pairs; see [`Trace::push`].
    pub fn from_points(metric: impl Into<String>, points: impl IntoIterator<Item = (f64, f64)>) -> Result<Self> {
        let mut trace = Trace::new(metric);
        for (t, v) in points {
            trace.push(t, v)?;
        }
        Ok(trace)
    }

    /// Appends a sample. A sample at the same time as the last one replaces
    /// it (several commits can land at one simulated instant); earlier times
    /// are rejected.
    pub fn push(&mut self, time: f64, value: f64) -> Result<()> {
        if !time.is_finite() {
            return Err(Error::config(format!("trace `{}`: non-finite time", self.metric)));
        }
        match self.points.last_mut() {
            Some(last) if time < last.0 => Err(Error::config(format!(
                "trace `{}`: time {time} precedes {}",
                self.metric, last.0
            ))),
            Some(last) if time == last.0 => {
                last.1 = value;
                Ok(())
            }
            _ => {
                self.points.push((time, value));
                Ok(())
            }
        }
    }

    pub fn metric(&self) -> &str {
        &self.metric
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn last_time(&self) -> Option<f64> {
        self.points.last().map(|p| p.0)
    }

    pub fn last_value(&self) -> Option<f64> {
        self.points.last().map(|p| p.1)
    }

    /// Piecewise-linear interpolant, flat before the first sample and after the last.
    pub fn value_at(&self, t: f64) -> f64 {
        let pts = &self.points;
        let i = pts.partition_point(|p| p.0 <= t);
        if i == 0 {
            return pts[0].1;
        }
        if i == pts.len() {
            return pts[i - 1].1;
        }
        let (t0, v0) = pts[i - 1];
        let (t1, v1) = pts[i];
        if t == t0 {
            v0
        } else {
            v0 + (v1 - v0) * (t - t0) / (t1 - t0)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EfficiencyReport {
    pub m_shared: f64,
    pub surface_a: f64,
    pub surface_b: f64,
    pub ratio: f64,
}

/// Trapezoid integral of `trace` over `[0, bound]` evaluated on `knots`
/// (sorted, starting at 0, ending at `bound`).
fn surface(trace: &Trace, knots: &[f64]) -> f64 {
    let mut total = 0.0;
    let mut prev = (knots[0], trace.value_at(knots[0]));
    for &t in &knots[1..] {
        let v = trace.value_at(t);
        total += 0.5 * (prev.1 + v) * (t - prev.0);
        prev = (t, v);
    }
    total
}

/// Ratio of the performance surfaces of `a` and `b` up to their minimal shared time.
pub fn temporal_efficiency(a: &Trace, b: &Trace) -> Result<EfficiencyReport> {
    let (Some(end_a), Some(end_b)) = (a.last_time(), b.last_time()) else {
        return Err(Error::Degenerate("empty trace".into()));
    };
    for trace in [a, b] {
        if trace.points.iter().any(|p| !(p.1 >= 0.0)) {
            return Err(Error::Degenerate(format!(
                "trace `{}` has negative or non-finite values",
                trace.metric
            )));
        }
    }
    let m_shared = end_a.min(end_b);
    if !(m_shared > 0.0) {
        return Err(Error::Degenerate(format!("minimal shared training time is {m_shared}")));
    }
    let mut knots: Vec<f64> = std::iter::once(0.0)
        .chain(a.points.iter().chain(&b.points).map(|p| p.0))
        .chain(std::iter::once(m_shared))
        .filter(|&t| (0.0..=m_shared).contains(&t))
        .collect();
    knots.sort_by(f64::total_cmp);
    knots.dedup();
    let surface_a = surface(a, &knots);
    let surface_b = surface(b, &knots);
    if surface_b == 0.0 {
        return Err(Error::Degenerate("denominator surface is zero".into()));
    }
    Ok(EfficiencyReport {
        m_shared,
        surface_a,
        surface_b,
        ratio: surface_a / surface_b,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct StalenessStats {
    pub mean_tau: f64,
    pub histogram: BTreeMap<u64, usize>,
    pub mean_param_distance: f64,
}

pub fn staleness_stats(log: &[LogEntry]) -> Result<StalenessStats> {
    if log.is_empty() {
        return Err(Error::config("staleness statistics of an empty log"));
    }
    let mut histogram = BTreeMap::new();
    let mut tau_sum: u128 = 0;
    let mut distance_sum = 0.0;
    for e in log {
        *histogram.entry(e.tau).or_insert(0) += 1;
        tau_sum += u128::from(e.tau);
        distance_sum += e.param_distance;
    }
    let n = log.len() as f64;
    Ok(StalenessStats {
        mean_tau: tau_sum as f64 / n,
        histogram,
        mean_param_distance: distance_sum / n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    /// Fraction of correctly classified samples; `None` for non-classifiers.
    pub accuracy: Option<f64>,
}

/// Full-pass loss and accuracy over `eval_set`.
pub fn evaluate(model: &Model, params: &ParamVector, eval_set: &Dataset) -> Result<Evaluation> {
    let loss = model.loss(params, &Batch::from_dataset(eval_set))?;
    let accuracy = if model.is_classifier() {
        let correct = eval_set
            .samples()
            .iter()
            .filter(|s| model.predict(params, &s.features) == Some(s.target as usize))
            .count();
        Some(correct as f64 / eval_set.len() as f64)
    } else {
        None
    };
    Ok(Evaluation { loss, accuracy })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Sample;

    fn entry(tau: u64, distance: f64) -> LogEntry {
        LogEntry {
            commit_index: 0,
            sim_time: 0.0,
            worker: 0,
            tau,
            delta_norm: 0.0,
            raw_delta_norm: 0.0,
            param_distance: distance,
            pre_norm: 0.0,
            post_norm: 0.0,
        }
    }

    #[test]
    fn trace_rejects_time_going_backwards() {
        let mut t = Trace::new("acc");
        t.push(1.0, 0.1).unwrap();
        t.push(1.0, 0.2).unwrap();
        assert_eq!(t.points(), &[(1.0, 0.2)]);
        assert!(t.push(0.5, 0.3).is_err());
    }

    #[test]
    fn efficiency_examples() {
        let a = Trace::from_points("acc", [(0.0, 0.8), (5.0, 0.8)]).unwrap();
        let b = Trace::from_points("acc", [(0.0, 0.4), (5.0, 0.4)]).unwrap();
        assert_eq!(temporal_efficiency(&a, &a).unwrap().ratio, 1.0);
        assert_eq!(temporal_efficiency(&a, &b).unwrap().ratio, 2.0);

        let linear = Trace::from_points("acc", [(0.0, 0.0), (10.0, 1.0)]).unwrap();
        let flat = Trace::from_points("acc", [(0.0, 0.5), (20.0, 0.5)]).unwrap();
        let r = temporal_efficiency(&linear, &flat).unwrap();
        assert_eq!(r.m_shared, 10.0);
        assert_eq!(r.surface_a, 5.0);
        assert_eq!(r.surface_b, 5.0);
        assert_eq!(r.ratio, 1.0);
    }

    #[test]
    fn value_before_first_sample_is_extended_flat() {
        let a = Trace::from_points("acc", [(2.0, 1.0), (4.0, 1.0)]).unwrap();
        let b = Trace::from_points("acc", [(0.0, 1.0), (4.0, 1.0)]).unwrap();
        let r = temporal_efficiency(&a, &b).unwrap();
        assert_eq!(r.surface_a, 4.0);
        assert_eq!(r.ratio, 1.0);
    }

    #[test]
    fn degenerate_denominator() {
        let a = Trace::from_points("acc", [(0.0, 1.0), (1.0, 1.0)]).unwrap();
        let zero = Trace::from_points("acc", [(0.0, 0.0), (1.0, 0.0)]).unwrap();
        assert!(matches!(temporal_efficiency(&a, &zero), Err(Error::Degenerate(_))));
        assert!(matches!(temporal_efficiency(&a, &Trace::new("acc")), Err(Error::Degenerate(_))));
        let at_zero = Trace::from_points("acc", [(0.0, 1.0)]).unwrap();
        assert!(matches!(temporal_efficiency(&a, &at_zero), Err(Error::Degenerate(_))));
    }

    #[test]
    fn staleness_examples() {
        let s = staleness_stats(&[entry(0, 0.0), entry(0, 0.0)]).unwrap();
        assert_eq!(s.mean_tau, 0.0);
        assert_eq!(s.histogram, BTreeMap::from([(0, 2)]));

        let s = staleness_stats(&[entry(0, 1.0), entry(1, 2.0), entry(1, 3.0), entry(2, 6.0)]).unwrap();
        assert_eq!(s.mean_tau, 1.0);
        assert_eq!(s.histogram, BTreeMap::from([(0, 1), (1, 2), (2, 1)]));
        assert_eq!(s.mean_param_distance, 3.0);
        assert!(staleness_stats(&[]).is_err());
    }

    fn balanced_line(n: usize) -> Dataset {
        let samples = (0..n)
            .map(|i| {
                let label = i % 2;
                let x = if label == 1 { 1.0 + i as f64 } else { -1.0 - i as f64 };
                Sample {
                    features: vec![x],
                    target: label as f64,
                }
            })
            .collect();
        Dataset::new("line", samples).unwrap()
    }

    #[test]
    fn evaluate_perfect_and_constant_predictors() {
        let model = Model::logistic_regression(1).unwrap();
        let data = balanced_line(10);
        let perfect = ParamVector::from_vec(vec![5.0, 0.0]);
        assert_eq!(evaluate(&model, &perfect, &data).unwrap().accuracy, Some(1.0));
        let constant = ParamVector::zeros(2);
        let e = evaluate(&model, &constant, &data).unwrap();
        assert_eq!(e.accuracy, Some(0.5));
        assert!((e.loss - 2f64.ln()).abs() < 1e-15);
    }
}
