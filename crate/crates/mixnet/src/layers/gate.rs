use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point on the probability simplex: the gating signal that weights the
/// experts of an MoE layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateVector(Vec<f64>);

impl GateVector {
    /// Validates an externally supplied gate at the given simplex tolerance.
    pub fn new(weights: Vec<f64>, tol: f64) -> Result<Self> {
        let sum: f64 = weights.iter().sum();
        if weights.iter().any(|w| !w.is_finite() || *w < -tol || *w > 1.0 + tol) {
            return Err(Error::Validation(format!(
                "gate weights must lie in [0,1]: {weights:?}"
            )));
        }
        if (sum - 1.0).abs() > tol {
            return Err(Error::Validation(format!(
                "gate weights must sum to 1 (got {sum})"
            )));
        }
        Ok(GateVector(weights))
    }

    /// Softmax with max-subtraction; the output sums to 1 within 1e-9 by
    /// construction.
    pub fn from_softmax(logits: &[f64]) -> Self {
        GateVector(softmax(logits))
    }

    pub fn one_hot(len: usize, index: usize) -> Self {
        let mut w = vec![0.0; len];
        w[index] = 1.0;
        GateVector(w)
    }

    pub fn uniform(len: usize) -> Self {
        GateVector(vec![1.0 / len as f64; len])
    }

    pub fn weights(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| e / sum).collect()
}

/// Backpropagates through softmax: given p = softmax(l) and dL/dp, returns
/// dL/dl = p ⊙ (dp − <dp, p>).
pub fn softmax_backward(p: &[f64], grad_p: &[f64]) -> Vec<f64> {
    let dot: f64 = p.iter().zip(grad_p).map(|(pi, gi)| pi * gi).sum();
    p.iter().zip(grad_p).map(|(pi, gi)| pi * (gi - dot)).collect()
}

/// Cross-entropy loss against a one-hot target with max-subtraction.
/// Returns (loss, dL/dlogits, posteriors).
pub fn softmax_ce(logits: &[f64], target: usize) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    if logits.iter().any(|l| !l.is_finite()) {
        return Err(Error::Validation("non-finite logits".into()));
    }
    if target >= logits.len() {
        return Err(Error::Validation(format!(
            "target {target} out of range for {} classes",
            logits.len()
        )));
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let shifted: Vec<f64> = logits.iter().map(|&l| l - max).collect();
    let log_sum = shifted.iter().map(|s| s.exp()).sum::<f64>().ln();
    let loss = log_sum - shifted[target];
    let posteriors: Vec<f64> = shifted.iter().map(|s| (s - log_sum).exp()).collect();
    let mut grad = posteriors.clone();
    grad[target] -= 1.0;
    Ok((loss, grad, posteriors))
}
