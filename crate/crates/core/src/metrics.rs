//! Mean absolute and root-mean-square error.

use libm::sqrt;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorMetrics {
    pub mae: f64,
    pub rmse: f64,
}

/// MAE and RMSE between paired observations and predictions.
pub fn metrics(y_true: &[f64], y_pred: &[f64]) -> Result<ErrorMetrics> {
    if y_true.len() != y_pred.len() {
        return Err(Error::MetricLengthMismatch(y_true.len(), y_pred.len()));
    }
    if y_true.is_empty() {
        return Err(Error::TooFewPoints { min: 1, got: 0 });
    }
    let n = y_true.len() as f64;
    let (abs, sq) = y_true
        .iter()
        .zip(y_pred)
        .fold((0.0, 0.0), |(a, s), (y, p)| {
            let e = y - p;
            (a + e.abs(), s + e * e)
        });
    Ok(ErrorMetrics { mae: abs / n, rmse: sqrt(sq / n) })
}
