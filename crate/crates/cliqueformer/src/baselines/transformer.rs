//! Structure-oblivious transformer surrogate: the same tokenizer and
//! encoder blocks as the main model, mean-pooled into an MLP regression
//! head, trained by mean-squared error only.

use crate::baselines::surrogate::DesignSurrogate;
use crate::error::{Error, Result};
use crate::model::params::{BlockParams, Mlp, TokenizerParams};
use crate::model::Modality;
use crate::numerics::graph::{Graph, Var};
use crate::numerics::optim::{clip_global_norm, AdamConfig, OptimizerState};
use crate::rng::SeededRng;
use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransformerSurrogateConfig {
    pub d_model: usize,
    pub n_blocks: usize,
    pub n_heads: usize,
    /// Regression-head hidden width (the parameter-matching knob).
    pub head_hidden: usize,
    pub modality: Modality,
}

impl TransformerSurrogateConfig {
    pub fn new(modality: Modality) -> Self {
        Self {
            d_model: 64,
            n_blocks: 2,
            n_heads: 2,
            head_hidden: 256,
            modality,
        }
    }

    pub fn seq_len(&self) -> usize {
        match self.modality {
            Modality::Continuous { dim } => dim,
            Modality::Discrete { seq_len, .. } => seq_len,
        }
    }

    /// Width of the flattened design row fed to `value_and_input_grads`.
    pub fn input_dim(&self) -> usize {
        match self.modality {
            Modality::Continuous { dim } => dim,
            Modality::Discrete { seq_len, vocab } => seq_len * vocab,
        }
    }

    /// Closed-form parameter count (matches `TransformerSurrogate::param_count`).
    pub fn param_count(&self) -> usize {
        let dm = self.d_model;
        let tokenizer = match self.modality {
            Modality::Continuous { dim } => 2 * dim * dm,
            Modality::Discrete { seq_len, vocab } => (seq_len + vocab) * dm,
        };
        let block =
            2 * dm + 3 * (dm * dm + dm) + dm * dm + 2 * dm + (dm * 4 * dm + 4 * dm) + (4 * dm * dm + dm);
        let h = self.head_hidden;
        let head = dm * h + h + h * h + h + h + 1;
        tokenizer + self.n_blocks * block + 2 * dm + head
    }
}

/// Tokenizer + encoder blocks + mean-pool + MLP head.
#[derive(Debug, Clone)]
pub struct TransformerSurrogate {
    pub cfg: TransformerSurrogateConfig,
    pub tokenizer: TokenizerParams,
    pub blocks: Vec<BlockParams>,
    pub ln_g: Array2<f64>,
    pub ln_b: Array2<f64>,
    pub head: Mlp,
}

impl TransformerSurrogate {
    pub fn init(cfg: TransformerSurrogateConfig, rng: &mut SeededRng) -> Result<Self> {
        if cfg.d_model == 0 || cfg.d_model % cfg.n_heads != 0 {
            return Err(Error::Config("d_model must be a positive multiple of n_heads".into()));
        }
        let dm = cfg.d_model;
        let tokenizer = match cfg.modality {
            Modality::Continuous { dim } => TokenizerParams::Continuous {
                w: rng.normal_mat(dim, dm, 0.02),
                p: rng.normal_mat(dim, dm, 0.02),
            },
            Modality::Discrete { seq_len, vocab } => TokenizerParams::Discrete {
                table: rng.normal_mat(vocab, dm, 0.02),
                pos: rng.normal_mat(seq_len, dm, 0.02),
            },
        };
        Ok(Self {
            tokenizer,
            blocks: (0..cfg.n_blocks)
                .map(|_| BlockParams::init_public(rng, dm))
                .collect(),
            ln_g: Array2::ones((1, dm)),
            ln_b: Array2::zeros((1, dm)),
            head: Mlp::init(rng, dm, cfg.head_hidden, 1),
            cfg,
        })
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |t| n += t.len());
        n
    }

    fn visit<'a>(&'a self, f: &mut impl FnMut(&'a Array2<f64>)) {
        match &self.tokenizer {
            TokenizerParams::Continuous { w, p } => {
                f(w);
                f(p);
            }
            TokenizerParams::Discrete { table, pos } => {
                f(table);
                f(pos);
            }
        }
        for b in &self.blocks {
            b.visit("b", &mut |_, t| f(t));
        }
        f(&self.ln_g);
        f(&self.ln_b);
        self.head.visit("head", &mut |_, t| f(t));
    }

    fn leafify(&self, g: &mut Graph) -> Vec<Var> {
        let mut vars = Vec::new();
        self.visit(&mut |t| vars.push(g.leaf(t.clone())));
        vars
    }

    fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut out: Vec<&mut Array2<f64>> = Vec::new();
        match &mut self.tokenizer {
            TokenizerParams::Continuous { w, p } => {
                out.push(w);
                out.push(p);
            }
            TokenizerParams::Discrete { table, pos } => {
                out.push(table);
                out.push(pos);
            }
        }
        for b in &mut self.blocks {
            b.push_tensors_mut(&mut out);
        }
        out.push(&mut self.ln_g);
        out.push(&mut self.ln_b);
        out.push(&mut self.head.l1.w);
        out.push(&mut self.head.l1.b);
        out.push(&mut self.head.l2.w);
        out.push(&mut self.head.l2.b);
        out.push(&mut self.head.l3.w);
        out.push(&mut self.head.l3.b);
        out
    }

    /// Build the forward pass for a (B, input_dim) design matrix; returns
    /// (B, 1) predictions and the input leaf.
    fn forward(&self, g: &mut Graph, vars: &[Var], x: &Array2<f64>) -> (Var, Var) {
        let seq_len = self.cfg.seq_len();
        let heads = self.cfg.n_heads;
        let mut cursor = 0usize;
        let mut next = || {
            cursor += 1;
            vars[cursor - 1]
        };

        let (xl, mut h) = match self.cfg.modality {
            Modality::Continuous { .. } => {
                let xl = g.leaf(x.clone());
                let (w, p) = (next(), next());
                (xl, g.scale_embed(xl, w, p))
            }
            Modality::Discrete { seq_len, vocab } => {
                // rows are flattened one-hot (or relaxed) blocks
                let b = x.nrows();
                let flat = x
                    .to_owned()
                    .into_shape((b * seq_len, vocab))
                    .expect("one-hot reshape");
                let xl = g.leaf(flat);
                let (table, pos) = (next(), next());
                let tok = g.matmul(xl, table);
                (xl, g.tile_rows(tok, pos))
            }
        };
        for _ in 0..self.cfg.n_blocks {
            let (ln1_g, ln1_b) = (next(), next());
            let (wq_w, wq_b, wk_w) = (next(), next(), next());
            let (wv_w, wv_b, wo_w, wo_b) = (next(), next(), next(), next());
            let (ln2_g, ln2_b) = (next(), next());
            let (m1_w, m1_b, m2_w, m2_b) = (next(), next(), next(), next());

            let a = g.layer_norm(h);
            let a = g.mul_row(a, ln1_g);
            let a = g.add_row(a, ln1_b);
            let q = g.matmul(a, wq_w);
            let q = g.add_row(q, wq_b);
            let k = g.matmul(a, wk_w);
            let v = g.matmul(a, wv_w);
            let v = g.add_row(v, wv_b);
            let att = g.attention(q, k, v, heads, seq_len);
            let o = g.matmul(att, wo_w);
            let o = g.add_row(o, wo_b);
            h = g.add(h, o);

            let m = g.layer_norm(h);
            let m = g.mul_row(m, ln2_g);
            let m = g.add_row(m, ln2_b);
            let m1 = g.matmul(m, m1_w);
            let m1 = g.add_row(m1, m1_b);
            let m1 = g.gelu(m1);
            let m2 = g.matmul(m1, m2_w);
            let m2 = g.add_row(m2, m2_b);
            h = g.add(h, m2);
        }
        let (lng, lnb) = (next(), next());
        let hn = g.layer_norm(h);
        let hn = g.mul_row(hn, lng);
        let hn = g.add_row(hn, lnb);
        let pooled = g.group_mean_rows(hn, seq_len);
        let (l1w, l1b, l2w, l2b, l3w, l3b) = (next(), next(), next(), next(), next(), next());
        let y = g.matmul(pooled, l1w);
        let y = g.add_row(y, l1b);
        let y = g.gelu(y);
        let y = g.matmul(y, l2w);
        let y = g.add_row(y, l2b);
        let y = g.gelu(y);
        let y = g.matmul(y, l3w);
        let y = g.add_row(y, l3b);
        assert_eq!(cursor, vars.len(), "transformer parameter cursor mismatch");
        (y, xl)
    }

    pub fn values(&self, x: &Array2<f64>) -> Array1<f64> {
        let mut g = Graph::new();
        let vars = self.leafify(&mut g);
        let (y, _) = self.forward(&mut g, &vars, x);
        Array1::from_iter(g.value(y).column(0).iter().cloned())
    }
}

impl DesignSurrogate for TransformerSurrogate {
    fn input_dim(&self) -> usize {
        self.cfg.input_dim()
    }

    fn value_and_input_grads(&self, x: &Array2<f64>) -> (Array1<f64>, Array2<f64>) {
        let mut g = Graph::new();
        let vars = self.leafify(&mut g);
        let (y, xl) = self.forward(&mut g, &vars, x);
        let values = Array1::from_iter(g.value(y).column(0).iter().cloned());
        let total = g.sum_all(y);
        let mut grads = g.backward(total);
        let gx_flat = grads.take(xl, g.value(xl).dim());
        // flatten back to design-row layout for discrete inputs
        let gx = if gx_flat.dim() == x.dim() {
            gx_flat
        } else {
            gx_flat.into_shape(x.dim()).expect("gradient reshape")
        };
        (values, gx)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransformerTrainConfig {
    pub lr: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TransformerTrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            steps: 2000,
            batch_size: 128,
            seed: 0,
        }
    }
}

/// Fit the transformer surrogate by mean-squared error.
pub fn fit_transformer_surrogate(
    x: &Array2<f64>,
    y: &Array1<f64>,
    cfg: TransformerSurrogateConfig,
    tc: &TransformerTrainConfig,
) -> Result<TransformerSurrogate> {
    if x.nrows() != y.len() || x.nrows() == 0 {
        return Err(Error::Shape("design rows vs scores".into()));
    }
    if x.ncols() != cfg.input_dim() {
        return Err(Error::Shape(format!(
            "design width {} vs surrogate input {}",
            x.ncols(),
            cfg.input_dim()
        )));
    }
    let root = SeededRng::new(tc.seed);
    let mut init_rng = root.split(0);
    let mut shuffle_rng = root.split(1);
    let mut surrogate = TransformerSurrogate::init(cfg, &mut init_rng)?;

    let shapes: Vec<(usize, usize)> = {
        let mut v = Vec::new();
        surrogate.visit(&mut |t| v.push(t.dim()));
        v
    };
    let mut opt = OptimizerState::new(AdamConfig::new(tc.lr, 0.0), &shapes);

    let n = x.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    shuffle_rng.shuffle(&mut order);
    let mut cursor = 0usize;
    for step in 0..tc.steps {
        let mut indices = Vec::with_capacity(tc.batch_size);
        for _ in 0..tc.batch_size {
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
        let vars = surrogate.leafify(&mut g);
        let (yhat, _) = surrogate.forward(&mut g, &vars, &xb);
        let yl = g.leaf(yb);
        let diff = g.sub(yl, yhat);
        let sq = g.mul(diff, diff);
        let ssum = g.sum_all(sq);
        let loss = g.scale(ssum, 1.0 / b);
        if !g.scalar(loss).is_finite() {
            return Err(Error::NonFinite(format!("transformer loss at step {step}")));
        }
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
    Ok(surrogate)
}

/// Pick the head width that brings the surrogate's parameter count within
/// `tolerance` (fractional) of `target`.
pub fn match_head_width(
    base: &TransformerSurrogateConfig,
    target: usize,
    tolerance: f64,
) -> Result<TransformerSurrogateConfig> {
    let mut best: Option<(usize, usize)> = None; // (diff, width)
    for h in 1..=16384 {
        let cfg = TransformerSurrogateConfig {
            head_hidden: h,
            ..base.clone()
        };
        let count = cfg.param_count();
        let diff = count.abs_diff(target);
        if best.map_or(true, |(d, _)| diff < d) {
            best = Some((diff, h));
        }
        if count > target.saturating_mul(2) {
            break;
        }
    }
    let (diff, width) = best.ok_or_else(|| Error::Config("no head width candidates".into()))?;
    if diff as f64 > tolerance * target as f64 {
        return Err(Error::Config(format!(
            "cannot match parameter count {target} within {:.1}% (best diff {diff})",
            tolerance * 100.0
        )));
    }
    Ok(TransformerSurrogateConfig {
        head_hidden: width,
        ..base.clone()
    })
}
