//! Surrogate training: clique-sampled variational bottleneck plus
//! reconstruction and regression terms, optimized with AdamW.

use crate::error::{Error, Result};
use crate::fgm::CliqueLayout;
use crate::model::{Batch, Cliqueformer, CliqueformerConfig, ForwardPass, Mode, Modality};
use crate::numerics::gaussian::DiagonalGaussian;
use crate::numerics::optim::{clip_global_norm, AdamConfig, OptimizerState};
use crate::rng::SeededRng;
use crate::tasks::{Dataset, Designs};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Weight of the regression term.
    pub tau: f64,
    pub model_lr: f64,
    pub vib_warmup_steps: usize,
    /// Ceiling of the warmed-up bottleneck coefficient; 0 disables the
    /// bottleneck term entirely.
    pub vib_max_coeff: f64,
    pub batch_size: usize,
    pub total_steps: usize,
    pub weight_decay: f64,
    pub grad_clip: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            tau: 10.0,
            model_lr: 1e-4,
            vib_warmup_steps: 1000,
            vib_max_coeff: 1.0,
            batch_size: 128,
            total_steps: 3000,
            weight_decay: 0.01,
            grad_clip: Some(10.0),
            seed: 0,
        }
    }
}

/// Per-step loss component log.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct StepStats {
    pub step: usize,
    /// Unweighted bottleneck term.
    pub vib: f64,
    pub nll: f64,
    pub mse: f64,
    pub total: f64,
    pub warmup: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub steps: Vec<StepStats>,
    pub wall_seconds: f64,
}

impl TrainReport {
    pub fn final_total(&self) -> f64 {
        self.steps.last().map_or(f64::NAN, |s| s.total)
    }
}

/// Linear bottleneck warmup: min(1, step / warmup_steps); 1 when
/// warmup_steps is 0.
pub fn warmup_coefficient(step: usize, warmup_steps: usize) -> f64 {
    if warmup_steps == 0 {
        1.0
    } else {
        (step as f64 / warmup_steps as f64).min(1.0)
    }
}

/// Single-clique bottleneck sample: draws a clique uniformly and returns
/// the posterior's KL to the standard normal over that clique's indices.
pub fn vib_term(q: &DiagonalGaussian, layout: &CliqueLayout, rng: &mut SeededRng) -> Result<f64> {
    if q.dim() != layout.latent_dim() {
        return Err(Error::Shape(format!(
            "posterior dimension {} vs layout d_z {}",
            q.dim(),
            layout.latent_dim()
        )));
    }
    let i = rng.index(layout.n_clique()) + 1;
    let indices = layout.clique_indices(i)?;
    q.kl_to_standard_normal(&indices)
}

/// Loss component values for one batch.
#[derive(Debug, Clone, Copy)]
pub struct LossValues {
    pub vib: f64,
    pub nll: f64,
    pub mse: f64,
    pub total: f64,
}

/// Batch loss and parameter gradients. `rng` is taken by value so a fixed
/// snapshot freezes all stochasticity (clique draws, posterior noise,
/// dropout) across repeated calls.
pub fn loss_clique(
    model: &Cliqueformer,
    batch: &Batch,
    targets: &Array2<f64>,
    mut rng: SeededRng,
    warmup_coeff: f64,
    tau: f64,
) -> Result<(LossValues, Vec<Array2<f64>>)> {
    let b = batch.batch_size();
    if b == 0 {
        return Err(Error::Data("empty batch".into()));
    }
    if targets.dim() != (b, 1) {
        return Err(Error::Shape(format!(
            "targets {:?} vs batch size {b}",
            targets.dim()
        )));
    }
    let layout = &model.cfg.layout;
    let d_z = layout.latent_dim();

    // stochastic draws for this batch, in a fixed order
    let mut clique_mask = Array2::zeros((b, d_z));
    for row in 0..b {
        let i = rng.index(layout.n_clique()) + 1;
        for k in layout.clique_range(i)? {
            clique_mask[(row, k)] = 1.0;
        }
    }
    let eps = rng.normal_mat(b, d_z, 1.0);
    let dropout_rng = rng.split(0);

    let mut pass = ForwardPass::new(model, Mode::Train, Some(dropout_rng));
    let (mu, logvar) = pass.encode(batch);
    let z = pass.reparam(mu, logvar, eps);

    // bottleneck: 0.5 (mu^2 + sigma^2 - 1 - logvar) over the sampled clique
    let g = &mut pass.graph;
    let mu_sq = g.mul(mu, mu);
    let var = g.exp(logvar);
    let sum = g.add(mu_sq, var);
    let ones = g.leaf(Array2::ones((b, d_z)));
    let centered = g.sub(sum, ones);
    let kl_elems_raw = g.sub(centered, logvar);
    let kl_elems = g.scale(kl_elems_raw, 0.5);
    let mask_leaf = g.leaf(clique_mask);
    let masked = g.mul(kl_elems, mask_leaf);
    let masked_sum = g.sum_all(masked);
    let vib = g.scale(masked_sum, 1.0 / b as f64);

    // reconstruction
    let xhat = pass.decode(z);
    let nll = match batch {
        Batch::Continuous(x) => {
            let g = &mut pass.graph;
            let xl = g.leaf(x.clone());
            let diff = g.sub(xl, xhat);
            let sq = g.mul(diff, diff);
            let ssq = g.sum_all(sq);
            let half = g.scale(ssq, 0.5 / b as f64);
            let d = x.ncols() as f64;
            g.add_scalar(half, 0.5 * d * (2.0 * std::f64::consts::PI).ln())
        }
        Batch::Discrete { vocab, .. } => {
            let targets_flat = batch.targets_flat().expect("discrete batch");
            let g = &mut pass.graph;
            let rows = targets_flat.len();
            let logits = g.reshape(xhat, rows, *vocab);
            g.softmax_xent(logits, &targets_flat, b)
        }
    };

    // regression
    let yhat = pass.predict(z);
    let g = &mut pass.graph;
    let yl = g.leaf(targets.clone());
    let ydiff = g.sub(yl, yhat);
    let ysq = g.mul(ydiff, ydiff);
    let ysum = g.sum_all(ysq);
    let mse = g.scale(ysum, 1.0 / b as f64);

    let vib_weighted = g.scale(vib, warmup_coeff);
    let mse_weighted = g.scale(mse, tau);
    let partial = g.add(vib_weighted, nll);
    let total = g.add(partial, mse_weighted);

    let values = LossValues {
        vib: pass.graph.scalar(vib),
        nll: pass.graph.scalar(nll),
        mse: pass.graph.scalar(mse),
        total: pass.graph.scalar(total),
    };
    if !values.total.is_finite() {
        return Err(Error::NonFinite(format!(
            "loss (vib {}, nll {}, mse {})",
            values.vib, values.nll, values.mse
        )));
    }
    let mut grads = pass.graph.backward(total);
    let param_grads = pass.param_grads(&mut grads);
    Ok((values, param_grads))
}

/// Full training run: AdamW over shuffled mini-batches, deterministic
/// given the seed.
pub fn train(
    dataset: &Dataset,
    model_cfg: &CliqueformerConfig,
    train_cfg: &TrainConfig,
) -> Result<(Cliqueformer, TrainReport)> {
    match (&dataset.designs, &model_cfg.modality) {
        (Designs::Continuous(x), Modality::Continuous { dim }) => {
            if x.ncols() != *dim {
                return Err(Error::Config(format!(
                    "dataset width {} vs model dim {dim}",
                    x.ncols()
                )));
            }
        }
        (Designs::Discrete { seqs, vocab }, Modality::Discrete { seq_len, vocab: v }) => {
            if vocab != v || seqs.first().map_or(true, |s| s.len() != *seq_len) {
                return Err(Error::Config("dataset sequences do not match model".into()));
            }
        }
        _ => return Err(Error::Config("dataset modality does not match model".into())),
    }
    if train_cfg.batch_size == 0 {
        return Err(Error::Config("batch_size must be >= 1".into()));
    }

    let start = std::time::Instant::now();
    let root = SeededRng::new(train_cfg.seed);
    let mut init_rng = root.split(0);
    let mut shuffle_rng = root.split(1);
    let mut model = Cliqueformer::new(model_cfg.clone(), &mut init_rng)?;

    let adam = AdamConfig::new(train_cfg.model_lr, train_cfg.weight_decay);
    let mut opt = {
        let tensors = model.params.tensors();
        OptimizerState::for_params(adam, &tensors)
    };

    let n = dataset.len();
    let mut order: Vec<usize> = (0..n).collect();
    shuffle_rng.shuffle(&mut order);
    let mut cursor = 0usize;
    let mut steps = Vec::with_capacity(train_cfg.total_steps);

    for step in 0..train_cfg.total_steps {
        let mut indices = Vec::with_capacity(train_cfg.batch_size);
        for _ in 0..train_cfg.batch_size {
            if cursor == n {
                shuffle_rng.shuffle(&mut order);
                cursor = 0;
            }
            indices.push(order[cursor]);
            cursor += 1;
        }
        let batch = Batch::from_designs(&dataset.designs, &indices);
        let targets =
            Array2::from_shape_fn((indices.len(), 1), |(r, _)| dataset.scores[indices[r]]);

        let warmup = warmup_coefficient(step, train_cfg.vib_warmup_steps) * train_cfg.vib_max_coeff;
        let step_rng = root.split(1000 + step as u64);
        let (values, mut grads) = loss_clique(
            &model,
            &batch,
            &targets,
            step_rng,
            warmup,
            train_cfg.tau,
        )
        .map_err(|e| Error::NonFinite(format!("step {step}: {e}")))?;

        if let Some(max_norm) = train_cfg.grad_clip {
            clip_global_norm(&mut grads, max_norm);
        }
        let grad_refs: Vec<&Array2<f64>> = grads.iter().collect();
        let mut tensors = model.params.tensors_mut();
        opt.update(&mut tensors, &grad_refs)?;

        steps.push(StepStats {
            step,
            vib: values.vib,
            nll: values.nll,
            mse: values.mse,
            total: values.total,
            warmup,
        });
    }

    Ok((
        model,
        TrainReport {
            steps,
            wall_seconds: start.elapsed().as_secs_f64(),
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasks::ScoreStats;
    use ndarray::Array1;

    fn toy_continuous_dataset(n: usize, seed: u64) -> Dataset {
        // y is a smooth function of x so the surrogate can overfit
        let mut rng = SeededRng::new(seed);
        let x = rng.normal_mat(n, 4, 1.0);
        let y = Array1::from_iter(
            x.rows()
                .into_iter()
                .map(|r| (r[0] * r[1]).sin() + 0.5 * r[2] - 0.3 * r[3] * r[3]),
        );
        Dataset::new(Designs::Continuous(x), y).unwrap()
    }

    fn toy_model_config() -> CliqueformerConfig {
        let layout = CliqueLayout::chain(2, 2, 1).unwrap();
        let mut cfg = CliqueformerConfig::new(layout, Modality::Continuous { dim: 4 });
        cfg.d_model = 8;
        cfg.n_blocks = 1;
        cfg.mlp_hidden = 16;
        cfg.dropout = 0.0;
        cfg
    }

    #[test]
    fn warmup_schedule() {
        assert_eq!(warmup_coefficient(0, 1000), 0.0);
        assert_eq!(warmup_coefficient(500, 1000), 0.5);
        assert_eq!(warmup_coefficient(1000, 1000), 1.0);
        assert_eq!(warmup_coefficient(5000, 1000), 1.0);
        assert_eq!(warmup_coefficient(0, 0), 1.0);
    }

    #[test]
    fn vib_term_zero_at_prior() {
        let layout = CliqueLayout::chain(3, 3, 1).unwrap();
        let q = DiagonalGaussian::new(
            Array1::zeros(layout.latent_dim()),
            Array1::zeros(layout.latent_dim()),
        )
        .unwrap();
        for s in 0..20 {
            let mut rng = SeededRng::new(s);
            assert_eq!(vib_term(&q, &layout, &mut rng).unwrap(), 0.0);
        }
    }

    #[test]
    fn vib_single_clique_equals_full_kl() {
        let layout = CliqueLayout::chain(1, 4, 0).unwrap();
        let mut rng = SeededRng::new(2);
        let q = DiagonalGaussian::new(rng.normal_vec(4), rng.normal_vec(4)).unwrap();
        let full = q.kl_to_standard_normal(&[0, 1, 2, 3]).unwrap();
        let mut draw_rng = SeededRng::new(3);
        assert_eq!(vib_term(&q, &layout, &mut draw_rng).unwrap(), full);
    }

    #[test]
    fn vib_expectation_matches_knot_multiplicity() {
        // enumerate all clique draws on a 3-clique layout: the average
        // equals sum_k multiplicity_k * kl_k / n_clique
        let layout = CliqueLayout::chain(3, 3, 1).unwrap();
        let mut rng = SeededRng::new(4);
        let d_z = layout.latent_dim();
        let q = DiagonalGaussian::new(rng.normal_vec(d_z), rng.normal_vec(d_z)).unwrap();

        let mut enumerated = 0.0;
        for i in 1..=3 {
            enumerated += q
                .kl_to_standard_normal(&layout.clique_indices(i).unwrap())
                .unwrap();
        }
        enumerated /= 3.0;

        let mult = layout.knot_multiplicity();
        let mut weighted = 0.0;
        for k in 0..d_z {
            weighted += mult[k] as f64 * q.kl_to_standard_normal(&[k]).unwrap();
        }
        weighted /= 3.0;
        assert!((enumerated - weighted).abs() < 1e-12);
    }

    #[test]
    fn loss_gradient_passes_finite_differences() {
        // frozen noise and clique draws; perturb one weight tensor
        let ds = toy_continuous_dataset(6, 5);
        let cfg = toy_model_config();
        let model = Cliqueformer::new(cfg, &mut SeededRng::new(6)).unwrap();
        let indices: Vec<usize> = (0..6).collect();
        let batch = Batch::from_designs(&ds.designs, &indices);
        let targets = Array2::from_shape_fn((6, 1), |(r, _)| ds.scores[r]);
        let frozen = SeededRng::new(7);

        let tensor_idx = 4usize; // encoder block 0 wq.w
        let shape = model.params.tensors()[tensor_idx].dim();
        let base: Vec<f64> = model.params.tensors()[tensor_idx].iter().cloned().collect();

        let with_weights = |weights: &[f64]| -> Cliqueformer {
            let mut m = model.clone();
            let mut tensors = m.params.tensors_mut();
            *tensors[tensor_idx] = Array2::from_shape_vec(shape, weights.to_vec()).unwrap();
            m
        };
        let f = |weights: &[f64]| -> f64 {
            let m = with_weights(weights);
            let (v, _) = loss_clique(&m, &batch, &targets, frozen.clone(), 0.7, 10.0).unwrap();
            v.total
        };
        let grad = |weights: &[f64]| -> Vec<f64> {
            let m = with_weights(weights);
            let (_, gs) = loss_clique(&m, &batch, &targets, frozen.clone(), 0.7, 10.0).unwrap();
            gs[tensor_idx].iter().cloned().collect()
        };
        let dev = crate::numerics::grad_check(f, grad, &base, 1e-5).unwrap();
        assert!(dev < 1e-3, "deviation {dev}");
    }

    #[test]
    fn tau_zero_recovers_pure_autoencoder_objective() {
        let ds = toy_continuous_dataset(5, 8);
        let cfg = toy_model_config();
        let model = Cliqueformer::new(cfg, &mut SeededRng::new(9)).unwrap();
        let indices: Vec<usize> = (0..5).collect();
        let batch = Batch::from_designs(&ds.designs, &indices);
        let targets = Array2::from_shape_fn((5, 1), |(r, _)| ds.scores[r]);
        let frozen = SeededRng::new(10);
        let (v, _) = loss_clique(&model, &batch, &targets, frozen.clone(), 1.0, 0.0).unwrap();
        assert!((v.total - (v.vib + v.nll)).abs() < 1e-12);
    }

    #[test]
    fn tiny_overfit_reduces_mse() {
        let ds = toy_continuous_dataset(64, 11);
        let cfg = toy_model_config();
        let tc = TrainConfig {
            batch_size: 64,
            total_steps: 2000,
            vib_warmup_steps: 200,
            model_lr: 3e-3,
            seed: 12,
            ..TrainConfig::default()
        };
        let (_, report) = train(&ds, &cfg, &tc).unwrap();
        let initial = report.steps[0].mse;
        let final_mse = report.steps.last().unwrap().mse;
        assert!(
            final_mse < 0.05 * initial,
            "mse {initial} -> {final_mse} did not overfit"
        );
    }

    #[test]
    fn training_is_bit_deterministic() {
        let ds = toy_continuous_dataset(32, 13);
        let cfg = toy_model_config();
        let tc = TrainConfig {
            batch_size: 16,
            total_steps: 30,
            seed: 14,
            ..TrainConfig::default()
        };
        let (m1, r1) = train(&ds, &cfg, &tc).unwrap();
        let (m2, r2) = train(&ds, &cfg, &tc).unwrap();
        assert_eq!(r1.final_total().to_bits(), r2.final_total().to_bits());
        assert_eq!(m1.params.checksum(), m2.params.checksum());
    }

    #[test]
    fn warmup_is_linear_in_curves() {
        let ds = toy_continuous_dataset(16, 15);
        let cfg = toy_model_config();
        let tc = TrainConfig {
            batch_size: 8,
            total_steps: 12,
            vib_warmup_steps: 10,
            seed: 16,
            ..TrainConfig::default()
        };
        let (_, report) = train(&ds, &cfg, &tc).unwrap();
        for s in &report.steps {
            let expect = (s.step as f64 / 10.0).min(1.0);
            assert_eq!(s.warmup, expect);
        }
    }

    #[test]
    fn components_are_nonnegative_up_to_nll_floor() {
        let ds = toy_continuous_dataset(8, 17);
        let cfg = toy_model_config();
        let model = Cliqueformer::new(cfg, &mut SeededRng::new(18)).unwrap();
        let indices: Vec<usize> = (0..8).collect();
        let batch = Batch::from_designs(&ds.designs, &indices);
        let targets = Array2::from_shape_fn((8, 1), |(r, _)| ds.scores[r]);
        let (v, _) =
            loss_clique(&model, &batch, &targets, SeededRng::new(19), 1.0, 10.0).unwrap();
        assert!(v.vib >= 0.0);
        assert!(v.mse >= 0.0);
        // continuous NLL is bounded below by the (d/2) log 2 pi constant
        let floor = 0.5 * 4.0 * (2.0 * std::f64::consts::PI).ln();
        assert!(v.nll >= floor);
        let _ = ScoreStats::from_scores(&ds.scores).unwrap();
    }

    #[test]
    fn train_rejects_modality_mismatch() {
        let ds = toy_continuous_dataset(8, 20);
        let layout = CliqueLayout::chain(2, 2, 1).unwrap();
        let cfg = CliqueformerConfig::new(
            layout,
            Modality::Discrete {
                seq_len: 4,
                vocab: 3,
            },
        );
        assert!(train(&ds, &cfg, &TrainConfig::default()).is_err());
    }
}
