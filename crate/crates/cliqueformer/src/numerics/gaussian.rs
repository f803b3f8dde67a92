//! Diagonal Gaussian posteriors: closed-form KL to the standard normal
//! prior and reparameterized sampling.

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use ndarray::Array1;

/// Log-variance clamp bounds; keeps KL and sampling finite.
pub const LOG_VAR_MIN: f64 = -8.0;
pub const LOG_VAR_MAX: f64 = 8.0;

/// Factorized normal distribution given by per-dimension mean and
/// log-variance. Log-variances are clamped to [-8, 8] on construction.
#[derive(Debug, Clone)]
pub struct DiagonalGaussian {
    mean: Array1<f64>,
    log_variance: Array1<f64>,
}

impl DiagonalGaussian {
    pub fn new(mean: Array1<f64>, log_variance: Array1<f64>) -> Result<Self> {
        if mean.len() != log_variance.len() {
            return Err(Error::Shape(format!(
                "mean length {} vs log_variance length {}",
                mean.len(),
                log_variance.len()
            )));
        }
        let log_variance = log_variance.mapv(|v| v.clamp(LOG_VAR_MIN, LOG_VAR_MAX));
        Ok(Self { mean, log_variance })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &Array1<f64> {
        &self.mean
    }

    pub fn log_variance(&self) -> &Array1<f64> {
        &self.log_variance
    }

    /// KL(q || N(0, I)) restricted to the given coordinate subset:
    /// 0.5 * sum_k (mu_k^2 + sigma_k^2 - 1 - log sigma_k^2).
    pub fn kl_to_standard_normal(&self, indices: &[usize]) -> Result<f64> {
        let mut total = 0.0;
        for &k in indices {
            if k >= self.dim() {
                return Err(Error::Shape(format!(
                    "index {k} out of range for dimension {}",
                    self.dim()
                )));
            }
            let mu = self.mean[k];
            let lv = self.log_variance[k];
            total += 0.5 * (mu * mu + lv.exp() - 1.0 - lv);
        }
        Ok(total)
    }

    /// z = mu + exp(logvar/2) * eps with caller-supplied noise.
    pub fn sample_with_noise(&self, eps: &Array1<f64>) -> Result<Array1<f64>> {
        if eps.len() != self.dim() {
            return Err(Error::Shape(format!(
                "noise length {} vs dimension {}",
                eps.len(),
                self.dim()
            )));
        }
        Ok(&self.mean + &(self.log_variance.mapv(|v| (0.5 * v).exp()) * eps))
    }

    /// Reparameterized sample with standard-normal noise from `rng`.
    pub fn reparam_sample(&self, rng: &mut SeededRng) -> Array1<f64> {
        let eps = rng.normal_vec(self.dim());
        self.sample_with_noise(&eps).expect("matching noise length")
    }
}
