use super::Tensor;
use crate::error::{Error, Result};

/// Numerically stable softmax over a rank-1 tensor.
pub fn softmax(logits: &Tensor) -> Tensor {
    let max = logits.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = logits.data().iter().map(|&v| (v - max).exp()).collect();
    let total: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= total);
    Tensor::vector(p)
}

/// Returns `(−log p[label], p)` with `p = softmax(logits)`.
pub fn softmax_cross_entropy(logits: &Tensor, label: usize) -> Result<(f64, Tensor)> {
    let classes = logits.len();
    if label >= classes {
        return Err(Error::Index(format!("label {label} with {classes} classes")));
    }
    let max = logits.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_norm = logits
        .data()
        .iter()
        .map(|&v| (v - max).exp())
        .sum::<f64>()
        .ln();
    let loss = -(logits.data()[label] - max - log_norm);
    // rounding can leave a tiny negative; NaN must pass through
    let loss = if loss < 0.0 { 0.0 } else { loss };
    Ok((loss, softmax(logits)))
}

/// Gradient of the loss with respect to the logits, scaled by `upstream`.
pub fn softmax_cross_entropy_backward(probs: &Tensor, label: usize, upstream: f64) -> Tensor {
    let mut g = probs.clone();
    g.data_mut()[label] -= 1.0;
    g.scale(upstream);
    g
}
