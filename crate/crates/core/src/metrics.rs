//! Accuracy metrics comparing a parameter estimate against the truth.

use crate::error::{Error, Result};
use crate::model::ThetaVector;

/// Normalized fit score `100 (1 - ||theta_hat - theta|| / ||theta - mean(theta) 1||)`,
/// where the mean runs over all entries of the true vector: 100 for a perfect
/// estimate, 0 for the constant vector at the truth's mean level, negative
/// beyond that.
pub fn fit_metric(theta_hat: &ThetaVector, theta_true: &ThetaVector) -> Result<f64> {
    if theta_hat.orders() != theta_true.orders() {
        return Err(Error::InvalidOrder(
            "fit metric requires estimates with matching block orders".into(),
        ));
    }
    let t = theta_true.to_flat();
    let h = theta_hat.to_flat();
    let mean = t.iter().sum::<f64>() / t.len() as f64;
    let denom = t.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>().sqrt();
    if denom == 0.0 {
        return Err(Error::ConstantTruth);
    }
    let num = h
        .iter()
        .zip(&t)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    Ok(100.0 * (1.0 - num / denom))
}

/// Squared parameter error over the dynamics sub-vector `[f; b]` only.
pub fn mse_dynamic(theta_hat: &ThetaVector, theta_true: &ThetaVector) -> Result<f64> {
    if theta_hat.orders() != theta_true.orders() {
        return Err(Error::InvalidOrder(
            "dynamics error requires estimates with matching block orders".into(),
        ));
    }
    let mut acc = 0.0;
    for (a, b) in theta_hat.f.iter().zip(&theta_true.f) {
        acc += (a - b) * (a - b);
    }
    for (a, b) in theta_hat.b.iter().zip(&theta_true.b) {
        acc += (a - b) * (a - b);
    }
    Ok(acc)
}
