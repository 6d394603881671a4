use rand::Rng as _;

use super::{Result, TensorError};
use crate::rng::Rng;

/// Draws an index with probability `probs[i]`, consuming exactly one uniform.
pub fn sample_categorical(probs: &[f64], rng: &mut Rng) -> Result<usize> {
    if probs.is_empty() {
        return Err(TensorError::DimensionMismatch {
            what: "categorical support",
            expected: 1,
            actual: 0,
        });
    }
    if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(TensorError::NonFinite("probabilities"));
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > 1e-6 {
        return Err(TensorError::NotNormalized(total));
    }
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            last_positive = i;
            acc += p;
            if u < acc {
                return Ok(i);
            }
        }
    }
    // rounding left u above the cumulative sum
    Ok(last_positive)
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}
