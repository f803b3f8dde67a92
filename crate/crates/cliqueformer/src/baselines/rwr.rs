//! Reward-weighted regression: fit a generative policy by exponentially
//! reweighted maximum likelihood, then iterate sample / score / re-fit
//! against a fitted surrogate.

use crate::baselines::ascent::design_matrix;
use crate::baselines::surrogate::{fit_surrogate, SurrogateMlp, SurrogateTrainConfig};
use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tasks::{Dataset, Designs};
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

const VAR_FLOOR: f64 = 1e-6;
const PROB_FLOOR: f64 = 1e-6;

/// Generative policy over designs.
#[derive(Debug, Clone)]
pub enum RwrPolicy {
    /// Diagonal Gaussian over continuous design space.
    Gaussian { mean: Array1<f64>, var: Array1<f64> },
    /// Independent per-position categorical over sequences.
    Categorical { probs: Array2<f64> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RwrConfig {
    /// Softmax temperature; `None` uses 0.1 * (y_max - y_min) of the data.
    pub beta: Option<f64>,
    pub iterations: usize,
    pub candidate_count: usize,
    pub surrogate: SurrogateTrainConfig,
    pub seed: u64,
}

impl Default for RwrConfig {
    fn default() -> Self {
        Self {
            beta: None,
            iterations: 10,
            candidate_count: 1000,
            surrogate: SurrogateTrainConfig::default(),
            seed: 0,
        }
    }
}

/// Softmax-style weights proportional to exp((y - max y) / beta); invariant
/// to adding a constant to all scores.
pub fn rwr_weights(scores: &Array1<f64>, beta: f64) -> Result<Array1<f64>> {
    if beta <= 0.0 {
        return Err(Error::Config("beta must be positive".into()));
    }
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w = scores.mapv(|y| ((y - max) / beta).exp());
    let total = w.sum();
    if total <= 0.0 || !total.is_finite() {
        return Err(Error::Data("degenerate weights (all zero)".into()));
    }
    Ok(w / total)
}

/// Closed-form weighted maximum likelihood for the policy family.
pub fn fit_policy_weighted(
    designs: &Designs,
    weights: &Array1<f64>,
) -> Result<RwrPolicy> {
    match designs {
        Designs::Continuous(x) => {
            if x.nrows() != weights.len() {
                return Err(Error::Shape("weights vs rows".into()));
            }
            let mut mean = Array1::zeros(x.ncols());
            for (row, &w) in x.rows().into_iter().zip(weights) {
                mean.zip_mut_with(&row, |m, &v| *m += w * v);
            }
            let mut var: Array1<f64> = Array1::zeros(x.ncols());
            for (row, &w) in x.rows().into_iter().zip(weights) {
                for (j, &v) in row.iter().enumerate() {
                    let d = v - mean[j];
                    var[j] += w * d * d;
                }
            }
            var.mapv_inplace(|v| v.max(VAR_FLOOR));
            Ok(RwrPolicy::Gaussian { mean, var })
        }
        Designs::Discrete { seqs, vocab } => {
            let l = seqs.first().map_or(0, |s| s.len());
            let mut probs = Array2::from_elem((l, *vocab), PROB_FLOOR);
            for (s, &w) in seqs.iter().zip(weights) {
                for (pos, &c) in s.iter().enumerate() {
                    probs[(pos, c)] += w;
                }
            }
            for mut row in probs.rows_mut() {
                let sum = row.sum();
                row.mapv_inplace(|p| p / sum);
            }
            Ok(RwrPolicy::Categorical { probs })
        }
    }
}

impl RwrPolicy {
    pub fn sample(&self, count: usize, rng: &mut SeededRng) -> Designs {
        match self {
            RwrPolicy::Gaussian { mean, var } => {
                let d = mean.len();
                let std = var.mapv(f64::sqrt);
                let mut x = Array2::zeros((count, d));
                for mut row in x.rows_mut() {
                    for j in 0..d {
                        row[j] = mean[j] + std[j] * rng.standard_normal();
                    }
                }
                Designs::Continuous(x)
            }
            RwrPolicy::Categorical { probs } => {
                let (l, vocab) = probs.dim();
                let seqs = (0..count)
                    .map(|_| {
                        (0..l)
                            .map(|pos| {
                                let mut u = rng.uniform(0.0, 1.0);
                                let mut pick = vocab - 1;
                                for v in 0..vocab {
                                    if u < probs[(pos, v)] {
                                        pick = v;
                                        break;
                                    }
                                    u -= probs[(pos, v)];
                                }
                                pick
                            })
                            .collect()
                    })
                    .collect();
                Designs::Discrete {
                    seqs,
                    vocab,
                }
            }
        }
    }
}

fn surrogate_scores(surrogate: &SurrogateMlp, designs: &Designs) -> Array1<f64> {
    let x = match designs {
        Designs::Continuous(x) => x.clone(),
        Designs::Discrete { seqs, vocab } => crate::tasks::one_hot_encode(seqs, *vocab),
    };
    surrogate.values(&x)
}

/// Full reward-weighted regression baseline.
pub fn rwr_baseline(dataset: &Dataset, cfg: &RwrConfig) -> Result<Designs> {
    let beta = match cfg.beta {
        Some(b) => b,
        None => 0.1 * (dataset.stats.y_max - dataset.stats.y_min),
    };
    if beta <= 0.0 {
        return Err(Error::Config(format!("beta {beta} must be positive")));
    }
    let root = SeededRng::new(cfg.seed);
    let mut sample_rng = root.split(0);

    // surrogate fitted once on the dataset, used to score policy samples
    let x = design_matrix(dataset);
    let surrogate_cfg = SurrogateTrainConfig {
        seed: root.split(1).seed(),
        ..cfg.surrogate.clone()
    };
    let (surrogate, _) = fit_surrogate(&x, &dataset.scores, &surrogate_cfg, None)?;

    let weights = rwr_weights(&dataset.scores, beta)?;
    let mut policy = fit_policy_weighted(&dataset.designs, &weights)?;

    let mut samples = policy.sample(cfg.candidate_count, &mut sample_rng);
    for _ in 0..cfg.iterations {
        let scores = surrogate_scores(&surrogate, &samples);
        let weights = rwr_weights(&scores, beta)?;
        policy = fit_policy_weighted(&samples, &weights)?;
        samples = policy.sample(cfg.candidate_count, &mut sample_rng);
    }
    Ok(samples)
}
