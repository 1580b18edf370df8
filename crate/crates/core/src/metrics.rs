//! Evaluation metrics: normalized MSE, tolerance accuracy, valid-solution rate.

use crate::ideas::Category;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Window length for the running valid-solution rate.
pub const VALID_RATE_WINDOW: usize = 40;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("targets are degenerate: variance is zero over {0} points")]
    DegenerateTargets(usize),
}

/// Metric values for one split of a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub nmse: f64,
    pub acc_tau: f64,
    pub tau: f64,
    pub n_points: usize,
    pub split: String,
}

/// Evaluate both metrics over one split's predictions.
pub fn report(
    predictions: &[f64],
    targets: &[f64],
    tau: f64,
    split: &str,
) -> Result<MetricReport, MetricsError> {
    Ok(MetricReport {
        nmse: nmse(predictions, targets)?,
        acc_tau: acc_tau(predictions, targets, tau),
        tau,
        n_points: targets.len(),
        split: split.to_string(),
    })
}

/// Squared prediction error normalized by target variance.
///
/// 0 is a perfect fit; 1 matches the mean predictor. Inputs must have equal
/// length of at least two, and the targets must not all be identical.
pub fn nmse(predictions: &[f64], targets: &[f64]) -> Result<f64, MetricsError> {
    assert_eq!(predictions.len(), targets.len(), "length mismatch");
    assert!(targets.len() >= 2, "nmse needs at least two points");
    let mean = targets.iter().sum::<f64>() / targets.len() as f64;
    let denom: f64 = targets.iter().map(|y| (y - mean).powi(2)).sum();
    if denom == 0.0 {
        return Err(MetricsError::DegenerateTargets(targets.len()));
    }
    let num: f64 = predictions.iter().zip(targets).map(|(p, y)| (p - y).powi(2)).sum();
    Ok(num / denom)
}

/// Fraction of points whose relative error is at most `tau`.
///
/// Points with a zero target count as hits only when the prediction is
/// exactly zero; the relative error is undefined there and exact match is
/// the conservative reading.
pub fn acc_tau(predictions: &[f64], targets: &[f64], tau: f64) -> f64 {
    assert_eq!(predictions.len(), targets.len(), "length mismatch");
    assert!(!targets.is_empty(), "acc_tau needs at least one point");
    assert!(tau > 0.0, "tau must be positive");
    let hits = predictions
        .iter()
        .zip(targets)
        .filter(|(p, y)| {
            if **y == 0.0 {
                **p == 0.0
            } else {
                ((**p - **y) / **y).abs() <= tau
            }
        })
        .count();
    hits as f64 / targets.len() as f64
}

/// Fraction of a candidate window that parsed, fitted, and evaluated.
pub fn valid_rate(window: &[Category]) -> f64 {
    assert!(!window.is_empty(), "valid_rate needs a non-empty window");
    let valid = window.iter().filter(|c| **c != Category::Invalid).count();
    valid as f64 / window.len() as f64
}
