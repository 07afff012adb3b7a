//! Log-domain and summary arithmetic.
//!
//! Everything here is max-shifted or compensated; no probability is ever
//! formed by exponentiating a raw score directly.

use alloc::vec::Vec;

/// Neumaier-compensated sum.
pub fn neumaier_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if libm::fabs(sum) >= libm::fabs(v) {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// `log(sum(exp(x)))`, shifted by the maximum.
///
/// Returns `-inf` for an empty slice or when every element is `-inf`.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let Some((arg, &max)) = values
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
    else {
        return f64::NEG_INFINITY;
    };
    if !max.is_finite() {
        return max;
    }
    // The maximum contributes exactly 1; ln_1p keeps the small remainder precise.
    let rest = neumaier_sum(
        values
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != arg)
            .map(|(_, &v)| libm::exp(v - max)),
    );
    max + libm::log1p(rest)
}

/// Softmax of `scores`, max-shifted. Empty input gives an empty output.
pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if scores.is_empty() {
        return Vec::new();
    }
    let weights: Vec<f64> = scores.iter().map(|&s| libm::exp(s - max)).collect();
    let total = neumaier_sum(weights.iter().copied());
    weights.into_iter().map(|w| w / total).collect()
}

/// Mean and population standard deviation. `None` for empty input.
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    if values.iter().all(|&v| v == values[0]) {
        return Some((values[0], 0.0));
    }
    let n = values.len() as f64;
    let mean = neumaier_sum(values.iter().copied()) / n;
    let var = neumaier_sum(values.iter().map(|v| (v - mean) * (v - mean))) / n;
    Some((mean, libm::sqrt(var)))
}
