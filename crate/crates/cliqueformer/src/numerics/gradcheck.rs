//! Central finite-difference validation of analytic gradients.

use crate::error::{Error, Result};

/// Maximum relative deviation between an analytic gradient and central
/// finite differences with step `h`:
/// max_k |g_k - (f(x + h e_k) - f(x - h e_k)) / 2h| / (|g_k| + 1e-8).
pub fn grad_check<F, G>(f: F, grad: G, point: &[f64], h: f64) -> Result<f64>
where
    F: Fn(&[f64]) -> f64,
    G: Fn(&[f64]) -> Vec<f64>,
{
    if h <= 0.0 {
        return Err(Error::Config("finite-difference step must be positive".into()));
    }
    let analytic = grad(point);
    if analytic.len() != point.len() {
        return Err(Error::Shape(format!(
            "gradient length {} vs point length {}",
            analytic.len(),
            point.len()
        )));
    }
    let mut max_dev: f64 = 0.0;
    let mut x = point.to_vec();
    for k in 0..point.len() {
        x[k] = point[k] + h;
        let fp = f(&x);
        x[k] = point[k] - h;
        let fm = f(&x);
        x[k] = point[k];
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::NonFinite(format!(
                "function value at perturbed coordinate {k}"
            )));
        }
        let fd = (fp - fm) / (2.0 * h);
        let dev = (analytic[k] - fd).abs() / (analytic[k].abs() + 1e-8);
        max_dev = max_dev.max(dev);
    }
    Ok(max_dev)
}
