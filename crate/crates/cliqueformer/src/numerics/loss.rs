//! Reconstruction negative log-likelihoods for a single design.

use crate::error::{Error, Result};
use ndarray::{ArrayView1, ArrayView2};

/// Unit-variance Gaussian NLL: 0.5 * ||x - x_hat||^2 + (d/2) * log(2*pi).
pub fn gaussian_recon_nll(x: ArrayView1<f64>, x_hat: ArrayView1<f64>) -> Result<f64> {
    if x.len() != x_hat.len() {
        return Err(Error::Shape(format!(
            "design length {} vs reconstruction length {}",
            x.len(),
            x_hat.len()
        )));
    }
    let sq: f64 = x
        .iter()
        .zip(x_hat.iter())
        .map(|(&a, &b)| (a - b) * (a - b))
        .sum();
    let d = x.len() as f64;
    Ok(0.5 * sq + 0.5 * d * (2.0 * std::f64::consts::PI).ln())
}

/// Per-position softmax cross-entropy summed over positions. Rows of
/// `onehot_x` must be valid probability rows (sum to 1).
pub fn categorical_recon_nll(onehot_x: ArrayView2<f64>, logits: ArrayView2<f64>) -> Result<f64> {
    if onehot_x.dim() != logits.dim() {
        return Err(Error::Shape(format!(
            "one-hot shape {:?} vs logits shape {:?}",
            onehot_x.dim(),
            logits.dim()
        )));
    }
    let mut total = 0.0;
    for (row_x, row_l) in onehot_x.rows().into_iter().zip(logits.rows()) {
        let sum: f64 = row_x.sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Data(format!("one-hot row sums to {sum}, expected 1")));
        }
        let max = row_l.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row_l.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
        let dot: f64 = row_x.iter().zip(row_l.iter()).map(|(&p, &l)| p * l).sum();
        total += lse - dot;
    }
    Ok(total)
}
