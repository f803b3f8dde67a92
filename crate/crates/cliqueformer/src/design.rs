//! Design phase: encode dataset samples into latent space, ascend the
//! surrogate with AdamW (whose decoupled decay shrinks latents toward the
//! origin, keeping clique marginals in-distribution), then decode.

use crate::error::{Error, Result};
use crate::model::{Batch, Cliqueformer, ForwardPass, Mode, Modality};
use crate::numerics::optim::{AdamConfig, OptimizerState};
use crate::rng::SeededRng;
use crate::tasks::{Dataset, Designs};
use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum DecodeMode {
    /// Deterministic per-position argmax for sequences.
    #[default]
    Argmax,
    /// Sample sequences from the decoder's per-position categorical.
    Sample,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DesignOptConfig {
    /// Number of candidates under optimization.
    pub candidate_count: usize,
    pub steps: usize,
    pub lr: f64,
    /// Decoupled decay rate; the per-step shrink factor is (1 - lr * wd).
    pub weight_decay: f64,
    pub decode_mode: DecodeMode,
    /// Apply the (1 - wd) decay as a separate explicit step instead of
    /// through the optimizer (alternative reading of the decay schedule).
    pub explicit_decay: bool,
    pub seed: u64,
}

impl Default for DesignOptConfig {
    fn default() -> Self {
        Self {
            candidate_count: 1000,
            steps: 50,
            lr: 3e-4,
            weight_decay: 0.5,
            decode_mode: DecodeMode::Argmax,
            explicit_decay: false,
            seed: 0,
        }
    }
}

/// Latent candidates under optimization plus their decoded designs.
#[derive(Debug, Clone)]
pub struct DesignBatch {
    pub latents: Array2<f64>,
    /// Mean surrogate value per ascent step.
    pub surrogate_trace: Vec<f64>,
    /// Largest |z| coordinate seen during optimization.
    pub max_abs_latent: f64,
    pub designs: Designs,
}

/// Objective over latent rows; rows are independent candidates.
pub trait LatentObjective {
    fn latent_dim(&self) -> usize;
    /// Mean value over rows and the per-row gradient of each row's own
    /// value with respect to that row.
    fn value_and_row_grads(&self, z: &Array2<f64>) -> (f64, Array2<f64>);
}

impl LatentObjective for Cliqueformer {
    fn latent_dim(&self) -> usize {
        self.cfg.layout.latent_dim()
    }

    fn value_and_row_grads(&self, z: &Array2<f64>) -> (f64, Array2<f64>) {
        let mut pass = ForwardPass::new(self, Mode::Eval, None);
        let zl = pass.graph.leaf(z.clone());
        let yhat = pass.predict(zl);
        let mean = pass.graph.value(yhat).mean().expect("nonempty batch");
        // summing makes each row's gradient exactly its own value gradient
        let total = pass.graph.sum_all(yhat);
        let mut grads = pass.graph.backward(total);
        let gz = grads.take(zl, z.dim());
        (mean, gz)
    }
}

/// Batch objective: mean surrogate value; the gradient with respect to
/// each row is that row's value gradient scaled by 1/B.
pub fn objective(model: &Cliqueformer, z: &Array2<f64>) -> (f64, Array2<f64>) {
    let (mean, row_grads) = model.value_and_row_grads(z);
    let b = z.nrows() as f64;
    (mean, row_grads / b)
}

/// Draw `candidate_count` designs from the dataset with replacement and
/// encode them into latent space (posterior sample, dropout off).
pub fn init_designs(
    model: &Cliqueformer,
    dataset: &Dataset,
    cfg: &DesignOptConfig,
    rng: &mut SeededRng,
) -> Result<Array2<f64>> {
    if dataset.is_empty() {
        return Err(Error::Data("empty dataset".into()));
    }
    if cfg.candidate_count == 0 {
        return Err(Error::Config("candidate_count must be >= 1".into()));
    }
    let indices: Vec<usize> = (0..cfg.candidate_count)
        .map(|_| rng.index(dataset.len()))
        .collect();
    let batch = Batch::from_designs(&dataset.designs, &indices);
    let (mu, logvar) = model.encode_eval(&batch);
    let eps = rng.normal_mat(mu.nrows(), mu.ncols(), 1.0);
    let std = logvar.mapv(|v| (0.5 * v).exp());
    Ok(&mu + &(std * eps))
}

/// Ascent loop over any latent objective. Maximizes by stepping against
/// the negated row gradients; AdamW's decay realizes the shrink toward
/// the origin. Model parameters are never touched.
pub fn ascend<O: LatentObjective>(
    obj: &O,
    mut z: Array2<f64>,
    cfg: &DesignOptConfig,
) -> Result<(Array2<f64>, Vec<f64>, f64)> {
    let adam_wd = if cfg.explicit_decay { 0.0 } else { cfg.weight_decay };
    let mut opt = OptimizerState::new(AdamConfig::new(cfg.lr, adam_wd), &[z.dim()]);
    let mut trace = Vec::with_capacity(cfg.steps);
    let mut max_abs = z.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
    for step in 0..cfg.steps {
        if cfg.explicit_decay {
            z.mapv_inplace(|v| v * (1.0 - cfg.weight_decay));
        }
        let (mean_val, row_grads) = obj.value_and_row_grads(&z);
        trace.push(mean_val);
        let neg = row_grads.mapv(|g| -g);
        opt.update(&mut [&mut z], &[&neg])?;
        if !z.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite(format!("latents at ascent step {step}")));
        }
        max_abs = z.iter().fold(max_abs, |a, &v| a.max(v.abs()));
    }
    Ok((z, trace, max_abs))
}

/// Full design phase: initialize from the dataset, ascend, decode.
pub fn optimize_designs(
    model: &Cliqueformer,
    dataset: &Dataset,
    cfg: &DesignOptConfig,
) -> Result<DesignBatch> {
    let root = SeededRng::new(cfg.seed);
    let mut init_rng = root.split(0);
    let z0 = init_designs(model, dataset, cfg, &mut init_rng)?;
    let (latents, surrogate_trace, max_abs_latent) = ascend(model, z0, cfg)?;
    let decoded = model.decode_eval(&latents);
    let designs = match model.cfg.modality {
        Modality::Continuous { .. } => Designs::Continuous(decoded),
        Modality::Discrete { seq_len, vocab } => {
            let mut decode_rng = root.split(1);
            let seqs = decode_sequences(&decoded, seq_len, vocab, cfg.decode_mode, &mut decode_rng);
            Designs::Discrete { seqs, vocab }
        }
    };
    Ok(DesignBatch {
        latents,
        surrogate_trace,
        max_abs_latent,
        designs,
    })
}

fn decode_sequences(
    logits: &Array2<f64>,
    seq_len: usize,
    vocab: usize,
    mode: DecodeMode,
    rng: &mut SeededRng,
) -> Vec<Vec<usize>> {
    logits
        .axis_iter(Axis(0))
        .map(|row| {
            (0..seq_len)
                .map(|pos| {
                    let block = row.slice(ndarray::s![pos * vocab..(pos + 1) * vocab]);
                    match mode {
                        DecodeMode::Argmax => block
                            .iter()
                            .enumerate()
                            .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite logits"))
                            .map(|(i, _)| i)
                            .expect("non-empty block"),
                        DecodeMode::Sample => {
                            let max = block.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                            let probs: Vec<f64> =
                                block.iter().map(|&v| (v - max).exp()).collect();
                            let total: f64 = probs.iter().sum();
                            let mut u = rng.uniform(0.0, 1.0) * total;
                            let mut pick = vocab - 1;
                            for (i, &p) in probs.iter().enumerate() {
                                if u < p {
                                    pick = i;
                                    break;
                                }
                                u -= p;
                            }
                            pick
                        }
                    }
                })
                .collect()
        })
        .collect()
}
