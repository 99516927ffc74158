//! Supervised cross-entropy with max-subtraction stabilization.

use crate::error::{Result, SaptError};

/// -log softmax(logits)[label].
pub fn cross_entropy(logits: &[f64], label: usize) -> Result<f64> {
    Ok(cross_entropy_with_grad(logits, label)?.0)
}

/// Returns the loss and d(loss)/d(logits) = softmax - onehot.
pub fn cross_entropy_with_grad(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    if label >= logits.len() {
        return Err(SaptError::Contract(format!(
            "cross_entropy: label {label} out of range for {} classes",
            logits.len()
        )));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(SaptError::Contract("cross_entropy: non-finite logits".into()));
    }
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&v| (v - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    let loss = z.ln() - (logits[label] - m);
    let mut grad: Vec<f64> = exps.iter().map(|e| e / z).collect();
    grad[label] -= 1.0;
    Ok((loss, grad))
}
