//! Plain MLP surrogate over design space, with optional conservative
//! regularization during fitting.

use crate::error::{Error, Result};
use crate::model::params::Mlp;
use crate::numerics::graph::{Graph, Var};
use crate::numerics::optim::{clip_global_norm, AdamConfig, OptimizerState};
use crate::rng::SeededRng;
use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

/// Anything that scores design rows and exposes input gradients; the
/// design-phase ascent runs against this interface.
pub trait DesignSurrogate {
    fn input_dim(&self) -> usize;
    /// Per-row values and the gradient of each row's value w.r.t. that row.
    fn value_and_input_grads(&self, x: &Array2<f64>) -> (Array1<f64>, Array2<f64>);
}

/// Two-hidden-layer GELU MLP regression model.
#[derive(Debug, Clone)]
pub struct SurrogateMlp {
    pub mlp: Mlp,
    d_in: usize,
}

impl SurrogateMlp {
    pub fn init(d_in: usize, hidden: usize, rng: &mut SeededRng) -> Self {
        Self {
            mlp: Mlp::init(rng, d_in, hidden, 1),
            d_in,
        }
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.mlp.visit("mlp", &mut |_, t| n += t.len());
        n
    }

    fn leafify(&self, g: &mut Graph) -> Vec<Var> {
        let mut vars = Vec::new();
        self.mlp.visit("mlp", &mut |_, t| vars.push(g.leaf(t.clone())));
        vars
    }

    fn forward(g: &mut Graph, vars: &[Var], x: Var) -> Var {
        // vars order: l1.w, l1.b, l2.w, l2.b, l3.w, l3.b
        let h = g.matmul(x, vars[0]);
        let h = g.add_row(h, vars[1]);
        let h = g.gelu(h);
        let h = g.matmul(h, vars[2]);
        let h = g.add_row(h, vars[3]);
        let h = g.gelu(h);
        let out = g.matmul(h, vars[4]);
        g.add_row(out, vars[5])
    }

    fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        vec![
            &mut self.mlp.l1.w,
            &mut self.mlp.l1.b,
            &mut self.mlp.l2.w,
            &mut self.mlp.l2.b,
            &mut self.mlp.l3.w,
            &mut self.mlp.l3.b,
        ]
    }

    pub fn values(&self, x: &Array2<f64>) -> Array1<f64> {
        let mut g = Graph::new();
        let vars = self.leafify(&mut g);
        let xl = g.leaf(x.clone());
        let out = Self::forward(&mut g, &vars, xl);
        Array1::from_iter(g.value(out).column(0).iter().cloned())
    }
}

impl DesignSurrogate for SurrogateMlp {
    fn input_dim(&self) -> usize {
        self.d_in
    }

    fn value_and_input_grads(&self, x: &Array2<f64>) -> (Array1<f64>, Array2<f64>) {
        let mut g = Graph::new();
        let vars = self.leafify(&mut g);
        let xl = g.leaf(x.clone());
        let out = Self::forward(&mut g, &vars, xl);
        let values = Array1::from_iter(g.value(out).column(0).iter().cloned());
        let total = g.sum_all(out);
        let mut grads = g.backward(total);
        (values, grads.take(xl, x.dim()))
    }
}

/// Conservatism settings: penalize the surrogate's value on designs
/// reached by a few inner ascent steps from the data.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ComsConfig {
    pub alpha: f64,
    pub inner_steps: usize,
    pub inner_lr: f64,
}

impl Default for ComsConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            inner_steps: 10,
            inner_lr: 0.05,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SurrogateTrainConfig {
    pub hidden: usize,
    pub lr: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for SurrogateTrainConfig {
    fn default() -> Self {
        Self {
            hidden: 256,
            lr: 1e-3,
            steps: 2000,
            batch_size: 128,
            seed: 0,
        }
    }
}

/// Fit by mean-squared error; with `coms` present, each step additionally
/// penalizes alpha * (mean value on inner-ascended designs - mean value on
/// the data batch). The ascended designs are computed outside the tape.
/// Returns the fitted surrogate and the per-step regularizer trace.
pub fn fit_surrogate(
    x: &Array2<f64>,
    y: &Array1<f64>,
    cfg: &SurrogateTrainConfig,
    coms: Option<ComsConfig>,
) -> Result<(SurrogateMlp, Vec<f64>)> {
    if x.nrows() != y.len() {
        return Err(Error::Shape(format!(
            "{} design rows vs {} scores",
            x.nrows(),
            y.len()
        )));
    }
    if x.nrows() == 0 {
        return Err(Error::Data("empty training data".into()));
    }
    let root = SeededRng::new(cfg.seed);
    let mut init_rng = root.split(0);
    let mut shuffle_rng = root.split(1);
    let mut surrogate = SurrogateMlp::init(x.ncols(), cfg.hidden, &mut init_rng);

    let adam = AdamConfig::new(cfg.lr, 0.0);
    let mut opt = OptimizerState::new(
        adam,
        &[
            surrogate.mlp.l1.w.dim(),
            surrogate.mlp.l1.b.dim(),
            surrogate.mlp.l2.w.dim(),
            surrogate.mlp.l2.b.dim(),
            surrogate.mlp.l3.w.dim(),
            surrogate.mlp.l3.b.dim(),
        ],
    );

    let n = x.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    shuffle_rng.shuffle(&mut order);
    let mut cursor = 0usize;
    let mut reg_trace = Vec::with_capacity(cfg.steps);

    for step in 0..cfg.steps {
        let mut indices = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.batch_size {
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

        // inner ascent outside the tape (the ascended points are constants)
        let adversarial = match coms {
            Some(c) if c.alpha > 0.0 && c.inner_steps > 0 => {
                let mut xa = xb.clone();
                for _ in 0..c.inner_steps {
                    let (_, gx) = surrogate.value_and_input_grads(&xa);
                    xa.zip_mut_with(&gx, |a, &g| *a += c.inner_lr * g);
                }
                if !xa.iter().all(|v| v.is_finite()) {
                    return Err(Error::NonFinite(format!("inner ascent at step {step}")));
                }
                Some(xa)
            }
            _ => None,
        };

        let mut g = Graph::new();
        let vars = surrogate.leafify(&mut g);
        let xl = g.leaf(xb);
        let yhat = SurrogateMlp::forward(&mut g, &vars, xl);
        let yl = g.leaf(yb);
        let diff = g.sub(yl, yhat);
        let sq = g.mul(diff, diff);
        let ssum = g.sum_all(sq);
        let mse = g.scale(ssum, 1.0 / b);

        let (loss, reg_value) = match (&adversarial, coms) {
            (Some(xa), Some(c)) => {
                let xa_leaf = g.leaf(xa.clone());
                let f_adv = SurrogateMlp::forward(&mut g, &vars, xa_leaf);
                let adv_sum = g.sum_all(f_adv);
                let adv_mean = g.scale(adv_sum, 1.0 / b);
                let data_sum = g.sum_all(yhat);
                let data_mean = g.scale(data_sum, 1.0 / b);
                let gap = g.sub(adv_mean, data_mean);
                let reg = g.scale(gap, c.alpha);
                let reg_value = g.scalar(reg);
                (g.add(mse, reg), reg_value)
            }
            _ => (mse, 0.0),
        };
        let loss_value = g.scalar(loss);
        if !loss_value.is_finite() {
            return Err(Error::NonFinite(format!("surrogate loss at step {step}")));
        }
        reg_trace.push(reg_value);

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
        let mut tensors = surrogate.tensors_mut();
        opt.update(&mut tensors, &grad_refs)?;
    }
    Ok((surrogate, reg_trace))
}
