//! Decomposed-vs-oblivious surrogate study on a chain-of-triangles RBF
//! task in raw latent space: two surrogates with matched parameter
//! counts, one summing per-clique MLPs over the true cliques, one
//! monolithic. Both fit the data and then propose designs by ascent.

use crate::baselines::ascent::{ascend_designs, AscentConfig};
use crate::baselines::surrogate::DesignSurrogate;
use crate::error::{Error, Result};
use crate::fgm::CliqueLayout;
use crate::model::params::Mlp;
use crate::numerics::graph::{Graph, Var};
use crate::numerics::optim::{clip_global_norm, AdamConfig, OptimizerState};
use crate::rng::SeededRng;
use crate::tasks::{generate_latent_rbf, LatentRbfConfig};
use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FgmStudyConfig {
    pub n_triangles: usize,
    pub n_samples: usize,
    pub hidden_per_clique: usize,
    pub train_steps: usize,
    pub train_lr: f64,
    pub batch_size: usize,
    pub ascent: AscentConfig,
    pub test_fraction: f64,
    pub param_tolerance: f64,
    pub seed: u64,
}

impl Default for FgmStudyConfig {
    fn default() -> Self {
        Self {
            n_triangles: 3,
            n_samples: 3000,
            hidden_per_clique: 48,
            train_steps: 1200,
            train_lr: 1e-3,
            batch_size: 128,
            ascent: AscentConfig {
                candidate_count: 128,
                steps: 200,
                lr: 0.02,
                seed: 0,
            },
            test_fraction: 0.2,
            param_tolerance: 0.05,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FgmStudyReport {
    pub test_mse_fgm: f64,
    pub test_mse_obl: f64,
    pub design_value_fgm: f64,
    pub design_value_obl: f64,
    pub params_fgm: usize,
    pub params_obl: usize,
}

/// Sum of independent per-clique MLPs over a fixed layout.
pub struct CliqueSumSurrogate {
    layout: CliqueLayout,
    mlps: Vec<Mlp>,
}

impl CliqueSumSurrogate {
    pub fn init(layout: CliqueLayout, hidden: usize, rng: &mut SeededRng) -> Self {
        let mlps = (1..=layout.n_clique())
            .map(|_| Mlp::init(rng, layout.d_clique(), hidden, 1))
            .collect();
        Self { layout, mlps }
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        for m in &self.mlps {
            m.visit("m", &mut |_, t| n += t.len());
        }
        n
    }

    fn leafify(&self, g: &mut Graph) -> Vec<Var> {
        let mut vars = Vec::new();
        for m in &self.mlps {
            m.visit("m", &mut |_, t| vars.push(g.leaf(t.clone())));
        }
        vars
    }

    fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut out: Vec<&mut Array2<f64>> = Vec::new();
        for m in &mut self.mlps {
            out.push(&mut m.l1.w);
            out.push(&mut m.l1.b);
            out.push(&mut m.l2.w);
            out.push(&mut m.l2.b);
            out.push(&mut m.l3.w);
            out.push(&mut m.l3.b);
        }
        out
    }

    fn forward(&self, g: &mut Graph, vars: &[Var], x: Var) -> Var {
        let mut total: Option<Var> = None;
        for (i, _) in self.mlps.iter().enumerate() {
            let range = self.layout.clique_range(i + 1).expect("valid clique");
            let slice = g.slice_cols(x, range.start, range.end);
            let base = 6 * i;
            let h = g.matmul(slice, vars[base]);
            let h = g.add_row(h, vars[base + 1]);
            let h = g.gelu(h);
            let h = g.matmul(h, vars[base + 2]);
            let h = g.add_row(h, vars[base + 3]);
            let h = g.gelu(h);
            let o = g.matmul(h, vars[base + 4]);
            let o = g.add_row(o, vars[base + 5]);
            total = Some(match total {
                None => o,
                Some(t) => g.add(t, o),
            });
        }
        total.expect("at least one clique")
    }

    pub fn values(&self, x: &Array2<f64>) -> Array1<f64> {
        let mut g = Graph::new();
        let vars = self.leafify(&mut g);
        let xl = g.leaf(x.clone());
        let y = self.forward(&mut g, &vars, xl);
        Array1::from_iter(g.value(y).column(0).iter().cloned())
    }
}

impl DesignSurrogate for CliqueSumSurrogate {
    fn input_dim(&self) -> usize {
        self.layout.latent_dim()
    }

    fn value_and_input_grads(&self, x: &Array2<f64>) -> (Array1<f64>, Array2<f64>) {
        let mut g = Graph::new();
        let vars = self.leafify(&mut g);
        let xl = g.leaf(x.clone());
        let y = self.forward(&mut g, &vars, xl);
        let values = Array1::from_iter(g.value(y).column(0).iter().cloned());
        let total = g.sum_all(y);
        let mut grads = g.backward(total);
        (values, grads.take(xl, x.dim()))
    }
}

/// Monolithic width `w` matching a target parameter count within the
/// given fractional tolerance.
pub fn match_monolithic_width(
    d_in: usize,
    target: usize,
    tolerance: f64,
) -> Result<usize> {
    let count = |w: usize| -> usize {
        // d_in -> w -> w -> 1 with biases
        d_in * w + w + w * w + w + w + 1
    };
    let mut best: Option<(usize, usize)> = None;
    for w in 1..=4096 {
        let diff = count(w).abs_diff(target);
        if best.map_or(true, |(d, _)| diff < d) {
            best = Some((diff, w));
        }
        if count(w) > 2 * target {
            break;
        }
    }
    let (diff, w) = best.ok_or_else(|| Error::Config("no width candidates".into()))?;
    if diff as f64 > tolerance * target as f64 {
        return Err(Error::Config(format!(
            "cannot match {target} parameters within {:.1}% (best diff {diff})",
            tolerance * 100.0
        )));
    }
    Ok(w)
}

struct Split {
    train_x: Array2<f64>,
    train_y: Array1<f64>,
    test_x: Array2<f64>,
    test_y: Array1<f64>,
}

fn train_test_split(x: &Array2<f64>, y: &Array1<f64>, test_fraction: f64, rng: &mut SeededRng) -> Split {
    let n = x.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);
    let n_test = ((n as f64) * test_fraction).round() as usize;
    let (test_idx, train_idx) = order.split_at(n_test);
    Split {
        train_x: x.select(Axis(0), train_idx),
        train_y: Array1::from_iter(train_idx.iter().map(|&i| y[i])),
        test_x: x.select(Axis(0), test_idx),
        test_y: Array1::from_iter(test_idx.iter().map(|&i| y[i])),
    }
}

enum EitherSurrogate {
    Fgm(CliqueSumSurrogate),
    Monolithic(crate::baselines::surrogate::SurrogateMlp),
}

impl DesignSurrogate for EitherSurrogate {
    fn input_dim(&self) -> usize {
        match self {
            EitherSurrogate::Fgm(s) => s.input_dim(),
            EitherSurrogate::Monolithic(s) => s.input_dim(),
        }
    }

    fn value_and_input_grads(&self, x: &Array2<f64>) -> (Array1<f64>, Array2<f64>) {
        match self {
            EitherSurrogate::Fgm(s) => s.value_and_input_grads(x),
            EitherSurrogate::Monolithic(s) => s.value_and_input_grads(x),
        }
    }
}

fn fit_clique_sum(
    mut s: CliqueSumSurrogate,
    x: &Array2<f64>,
    y: &Array1<f64>,
    steps: usize,
    lr: f64,
    batch_size: usize,
    seed: u64,
) -> Result<CliqueSumSurrogate> {
    let shapes: Vec<(usize, usize)> = {
        let mut g = Graph::new();
        s.leafify(&mut g)
            .iter()
            .map(|&v| g.value(v).dim())
            .collect()
    };
    let mut opt = OptimizerState::new(AdamConfig::new(lr, 0.0), &shapes);
    let mut shuffle_rng = SeededRng::new(seed);
    let n = x.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    shuffle_rng.shuffle(&mut order);
    let mut cursor = 0usize;
    for _ in 0..steps {
        let mut indices = Vec::with_capacity(batch_size);
        for _ in 0..batch_size {
            if cursor == n {
                shuffle_rng.shuffle(&mut order);
                cursor = 0;
            }
            indices.push(order[cursor]);
            cursor += 1;
        }
        let xb = x.select(Axis(0), &indices);
        let yb = Array2::from_shape_fn((indices.len(), 1), |(r, _)| y[indices[r]]);
        let b = indices.len() as f64;
        let mut g = Graph::new();
        let vars = s.leafify(&mut g);
        let xl = g.leaf(xb);
        let yhat = s.forward(&mut g, &vars, xl);
        let yl = g.leaf(yb);
        let diff = g.sub(yl, yhat);
        let sq = g.mul(diff, diff);
        let ssum = g.sum_all(sq);
        let loss = g.scale(ssum, 1.0 / b);
        let mut grads = g.backward(loss);
        let mut gs: Vec<Array2<f64>> = vars
            .iter()
            .map(|&v| {
                let shape = g.value(v).dim();
                grads.take(v, shape)
            })
            .collect();
        clip_global_norm(&mut gs, 10.0);
        let grad_refs: Vec<&Array2<f64>> = gs.iter().collect();
        let mut tensors = s.tensors_mut();
        opt.update(&mut tensors, &grad_refs)?;
    }
    Ok(s)
}

fn mse(pred: &Array1<f64>, target: &Array1<f64>) -> f64 {
    pred.iter()
        .zip(target.iter())
        .map(|(&p, &t)| (p - t) * (p - t))
        .sum::<f64>()
        / pred.len() as f64
}

/// Run the paired study. Scores designs with the hidden RBF value in raw
/// latent space (no observation transform, no validity gate), so the two
/// surrogates are compared purely on fit and design quality.
pub fn fgm_vs_oblivious(cfg: &FgmStudyConfig) -> Result<FgmStudyReport> {
    let root = SeededRng::new(cfg.seed);
    // minimal observed tail; the head coordinates of x are exactly z
    let d_z = 2 * cfg.n_triangles + 1;
    let task_cfg = LatentRbfConfig {
        n_triangles: cfg.n_triangles,
        observed_dim: d_z + 1,
        n_samples: cfg.n_samples,
        centers_per_clique: 4,
        sigma_rbf: 1.0,
        eps_valid: 1e-3,
    };
    let (task, dataset) = generate_latent_rbf(&task_cfg, root.split(0).seed())?;
    let x_full = match &dataset.designs {
        crate::tasks::Designs::Continuous(x) => x.slice(ndarray::s![.., ..d_z]).to_owned(),
        _ => unreachable!("latent RBF data is continuous"),
    };
    let split = train_test_split(&x_full, &dataset.scores, cfg.test_fraction, &mut root.split(1));

    let fgm = CliqueSumSurrogate::init(
        task.layout().clone(),
        cfg.hidden_per_clique,
        &mut root.split(2),
    );
    let params_fgm = fgm.param_count();
    let width = match_monolithic_width(d_z, params_fgm, cfg.param_tolerance)?;
    let mono = {
        let mut rng = root.split(3);
        crate::baselines::surrogate::SurrogateMlp::init(d_z, width, &mut rng)
    };
    let params_obl = mono.param_count();

    let fgm = fit_clique_sum(
        fgm,
        &split.train_x,
        &split.train_y,
        cfg.train_steps,
        cfg.train_lr,
        cfg.batch_size,
        root.split(4).seed(),
    )?;
    let mono = {
        let scfg = crate::baselines::surrogate::SurrogateTrainConfig {
            hidden: width,
            lr: cfg.train_lr,
            steps: cfg.train_steps,
            batch_size: cfg.batch_size,
            seed: root.split(5).seed(),
        };
        let (m, _) =
            crate::baselines::surrogate::fit_surrogate(&split.train_x, &split.train_y, &scfg, None)?;
        m
    };

    let test_mse_fgm = mse(&fgm.values(&split.test_x), &split.test_y);
    let test_mse_obl = mse(&mono.values(&split.test_x), &split.test_y);

    // design phase: same initial candidates, same ascent settings
    let mut init_rng = root.split(6);
    let picks: Vec<usize> = (0..cfg.ascent.candidate_count)
        .map(|_| init_rng.index(split.train_x.nrows()))
        .collect();
    let x0 = split.train_x.select(Axis(0), &picks);

    let design_value = |s: &EitherSurrogate| -> Result<f64> {
        let (ascended, _) = ascend_designs(s, x0.clone(), &cfg.ascent, None)?;
        let mut total = 0.0;
        for row in ascended.rows() {
            total += task.raw_value(row);
        }
        Ok(total / ascended.nrows() as f64)
    };
    let design_value_fgm = design_value(&EitherSurrogate::Fgm(fgm))?;
    let design_value_obl = design_value(&EitherSurrogate::Monolithic(mono))?;

    Ok(FgmStudyReport {
        test_mse_fgm,
        test_mse_obl,
        design_value_fgm,
        design_value_obl,
        params_fgm,
        params_obl,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parameter_matching_within_tolerance() {
        let layout = CliqueLayout::chain(3, 3, 1).unwrap();
        let s = CliqueSumSurrogate::init(layout, 48, &mut SeededRng::new(1));
        let target = s.param_count();
        let w = match_monolithic_width(7, target, 0.05).unwrap();
        let mono = crate::baselines::surrogate::SurrogateMlp::init(7, w, &mut SeededRng::new(2));
        let got = mono.param_count();
        assert!(
            got.abs_diff(target) as f64 <= 0.05 * target as f64,
            "{got} vs {target}"
        );
    }

    #[test]
    fn clique_sum_gradients_match_finite_differences() {
        let layout = CliqueLayout::chain(2, 3, 1).unwrap();
        let s = CliqueSumSurrogate::init(layout, 8, &mut SeededRng::new(3));
        let x0: Vec<f64> = (0..5).map(|i| 0.2 * i as f64 - 0.4).collect();
        let f = |x: &[f64]| -> f64 {
            let xm = Array2::from_shape_vec((1, 5), x.to_vec()).unwrap();
            s.values(&xm)[0]
        };
        let grad = |x: &[f64]| -> Vec<f64> {
            let xm = Array2::from_shape_vec((1, 5), x.to_vec()).unwrap();
            let (_, g) = s.value_and_input_grads(&xm);
            g.row(0).to_vec()
        };
        let dev = crate::numerics::grad_check(f, grad, &x0, 1e-5).unwrap();
        assert!(dev < 1e-6, "deviation {dev}");
    }

    #[test]
    fn both_fit_a_linear_target_comparably() {
        // an additive-in-every-direction target gives neither side an edge
        let mut rng = SeededRng::new(4);
        let x = rng.normal_mat(1500, 5, 1.0);
        let y = Array1::from_iter(x.rows().into_iter().map(|r| r.sum()));
        let layout = CliqueLayout::chain(2, 3, 1).unwrap();
        let fgm = CliqueSumSurrogate::init(layout, 24, &mut SeededRng::new(5));
        let target = fgm.param_count();
        let w = match_monolithic_width(5, target, 0.05).unwrap();
        let fgm = fit_clique_sum(fgm, &x, &y, 600, 1e-3, 128, 6).unwrap();
        let (mono, _) = crate::baselines::surrogate::fit_surrogate(
            &x,
            &y,
            &crate::baselines::surrogate::SurrogateTrainConfig {
                hidden: w,
                lr: 1e-3,
                steps: 600,
                batch_size: 128,
                seed: 7,
            },
            None,
        )
        .unwrap();
        let test = rng.normal_mat(200, 5, 1.0);
        let target_y = Array1::from_iter(test.rows().into_iter().map(|r| r.sum()));
        let mse_fgm = mse(&fgm.values(&test), &target_y);
        let mse_obl = mse(&mono.values(&test), &target_y);
        assert!(mse_fgm < 0.1, "fgm mse {mse_fgm}");
        assert!(mse_obl < 0.1, "oblivious mse {mse_obl}");
        let ratio = (mse_fgm / mse_obl).max(mse_obl / mse_fgm);
        assert!(ratio < 25.0, "mse ratio {ratio}");
    }
}
