//! Design-space gradient ascent shared by the baselines. Discrete designs
//! ascend on the one-hot simplex relaxation (clamp + renormalize after
//! every step) and decode by per-position argmax.

use crate::baselines::surrogate::DesignSurrogate;
use crate::error::{Error, Result};
use crate::numerics::optim::{AdamConfig, OptimizerState};
use crate::rng::SeededRng;
use crate::tasks::{argmax_decode, one_hot_encode, Dataset, Designs};
use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AscentConfig {
    pub candidate_count: usize,
    pub steps: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for AscentConfig {
    fn default() -> Self {
        Self {
            candidate_count: 1000,
            steps: 200,
            lr: 0.01,
            seed: 0,
        }
    }
}

/// Design matrix view of a dataset: continuous rows as-is, sequences as
/// flattened one-hot rows.
pub fn design_matrix(dataset: &Dataset) -> Array2<f64> {
    match &dataset.designs {
        Designs::Continuous(x) => x.clone(),
        Designs::Discrete { seqs, vocab } => one_hot_encode(seqs, *vocab),
    }
}

/// Draw initial candidates from the dataset with replacement.
pub fn init_from_dataset(
    dataset: &Dataset,
    count: usize,
    rng: &mut SeededRng,
) -> Result<Array2<f64>> {
    if dataset.is_empty() {
        return Err(Error::Data("empty dataset".into()));
    }
    let x = design_matrix(dataset);
    let indices: Vec<usize> = (0..count).map(|_| rng.index(x.nrows())).collect();
    Ok(x.select(Axis(0), &indices))
}

/// Project every (vocab)-block of each row back onto the probability
/// simplex by clamping at zero and renormalizing.
pub fn project_simplex_blocks(x: &mut Array2<f64>, vocab: usize) {
    for mut row in x.rows_mut() {
        let blocks = row.len() / vocab;
        for b in 0..blocks {
            let mut block = row.slice_mut(ndarray::s![b * vocab..(b + 1) * vocab]);
            block.mapv_inplace(|v| v.max(0.0));
            let sum = block.sum();
            if sum > 1e-12 {
                block.mapv_inplace(|v| v / sum);
            } else {
                block.fill(1.0 / vocab as f64);
            }
        }
    }
}

/// Adam ascent of the surrogate in design space. `discrete_vocab` turns on
/// the simplex projection.
pub fn ascend_designs<S: DesignSurrogate + ?Sized>(
    surrogate: &S,
    mut x: Array2<f64>,
    cfg: &AscentConfig,
    discrete_vocab: Option<usize>,
) -> Result<(Array2<f64>, Vec<f64>)> {
    let mut opt = OptimizerState::new(AdamConfig::new(cfg.lr, 0.0), &[x.dim()]);
    let mut trace = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let (values, gx) = surrogate.value_and_input_grads(&x);
        trace.push(values.mean().unwrap_or(f64::NAN));
        let neg = gx.mapv(|g| -g);
        opt.update(&mut [&mut x], &[&neg])?;
        if let Some(vocab) = discrete_vocab {
            project_simplex_blocks(&mut x, vocab);
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite(format!("designs at ascent step {step}")));
        }
    }
    Ok((x, trace))
}

/// Wrap ascended rows back into the dataset's design modality.
pub fn designs_from_matrix(x: Array2<f64>, reference: &Designs) -> Designs {
    match reference {
        Designs::Continuous(_) => Designs::Continuous(x),
        Designs::Discrete { vocab, .. } => {
            let seqs = x.rows().into_iter().map(|r| argmax_decode(r, *vocab)).collect();
            Designs::Discrete {
                seqs,
                vocab: *vocab,
            }
        }
    }
}
