//! Least-squares line and Pearson correlation between divergence and accuracy.

use serde::{Deserialize, Serialize};

use crate::numeric::neumaier_sum;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitPoint {
    pub distance: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub pearson_r: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum FitError {
    #[error("need at least two points, got {0}")]
    TooFewPoints(usize),
    #[error("all distances are equal; the slope is undefined")]
    DegenerateInput,
    #[error("non-finite coordinate in input")]
    NonFinite,
}

/// Ordinary least squares `accuracy ≈ slope · distance + intercept` plus Pearson r.
///
/// When accuracy is constant the correlation is reported as 0.
pub fn accuracy_divergence_fit(points: &[FitPoint]) -> Result<LinearFit, FitError> {
    let n = points.len();
    if n < 2 {
        return Err(FitError::TooFewPoints(n));
    }
    if points.iter().any(|p| !p.distance.is_finite() || !p.accuracy.is_finite()) {
        return Err(FitError::NonFinite);
    }
    let nf = n as f64;
    let mean_x = neumaier_sum(points.iter().map(|p| p.distance)) / nf;
    let mean_y = neumaier_sum(points.iter().map(|p| p.accuracy)) / nf;
    let sxx = neumaier_sum(points.iter().map(|p| (p.distance - mean_x) * (p.distance - mean_x)));
    let syy = neumaier_sum(points.iter().map(|p| (p.accuracy - mean_y) * (p.accuracy - mean_y)));
    let sxy = neumaier_sum(points.iter().map(|p| (p.distance - mean_x) * (p.accuracy - mean_y)));
    if sxx == 0.0 || points.iter().all(|p| p.distance == points[0].distance) {
        return Err(FitError::DegenerateInput);
    }
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let pearson_r = if syy == 0.0 {
        0.0
    } else {
        (sxy / libm::sqrt(sxx * syy)).clamp(-1.0, 1.0)
    };
    Ok(LinearFit { slope, intercept, pearson_r, n })
}
