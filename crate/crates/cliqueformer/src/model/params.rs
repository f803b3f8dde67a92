//! Learnable weights of the surrogate and their canonical tensor order.

use crate::model::{CliqueformerConfig, Modality};
use crate::rng::SeededRng;
use ndarray::Array2;

/// Affine layer weights; bias is stored as a (1, out) row.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: Array2<f64>,
    pub b: Array2<f64>,
}

impl Linear {
    fn init(rng: &mut SeededRng, fan_in: usize, fan_out: usize) -> Self {
        let std = (2.0 / (fan_in + fan_out) as f64).sqrt();
        Self {
            w: rng.normal_mat(fan_in, fan_out, std),
            b: Array2::zeros((1, fan_out)),
        }
    }

    fn visit<'a>(&'a self, name: &str, f: &mut impl FnMut(String, &'a Array2<f64>)) {
        f(format!("{name}.w"), &self.w);
        f(format!("{name}.b"), &self.b);
    }

    fn visit_mut(&mut self, name: &str, f: &mut impl FnMut(String, &mut Array2<f64>)) {
        f(format!("{name}.w"), &mut self.w);
        f(format!("{name}.b"), &mut self.b);
    }
}

/// One pre-norm transformer block: attention and position-wise MLP
/// sublayers with residual connections. The key projection carries no
/// bias: a constant added to every key shifts each softmax row uniformly,
/// so such a bias can never receive gradient.
#[derive(Debug, Clone)]
pub struct BlockParams {
    pub ln1_g: Array2<f64>,
    pub ln1_b: Array2<f64>,
    pub wq: Linear,
    pub wk: Array2<f64>,
    pub wv: Linear,
    pub wo: Linear,
    pub ln2_g: Array2<f64>,
    pub ln2_b: Array2<f64>,
    pub mlp1: Linear,
    pub mlp2: Linear,
}

impl BlockParams {
    pub fn init_public(rng: &mut SeededRng, d_model: usize) -> Self {
        Self::init(rng, d_model)
    }

    /// Append mutable references to this block's tensors in visit order.
    pub fn push_tensors_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Array2<f64>>) {
        push_block(out, self);
    }

    fn init(rng: &mut SeededRng, d_model: usize) -> Self {
        let hidden = 4 * d_model;
        Self {
            ln1_g: Array2::ones((1, d_model)),
            ln1_b: Array2::zeros((1, d_model)),
            wq: Linear::init(rng, d_model, d_model),
            wk: {
                let std = (2.0 / (2 * d_model) as f64).sqrt();
                rng.normal_mat(d_model, d_model, std)
            },
            wv: Linear::init(rng, d_model, d_model),
            wo: Linear::init(rng, d_model, d_model),
            ln2_g: Array2::ones((1, d_model)),
            ln2_b: Array2::zeros((1, d_model)),
            mlp1: Linear::init(rng, d_model, hidden),
            mlp2: Linear::init(rng, hidden, d_model),
        }
    }

    pub fn visit<'a>(&'a self, name: &str, f: &mut impl FnMut(String, &'a Array2<f64>)) {
        f(format!("{name}.ln1_g"), &self.ln1_g);
        f(format!("{name}.ln1_b"), &self.ln1_b);
        self.wq.visit(&format!("{name}.wq"), f);
        f(format!("{name}.wk.w"), &self.wk);
        self.wv.visit(&format!("{name}.wv"), f);
        self.wo.visit(&format!("{name}.wo"), f);
        f(format!("{name}.ln2_g"), &self.ln2_g);
        f(format!("{name}.ln2_b"), &self.ln2_b);
        self.mlp1.visit(&format!("{name}.mlp1"), f);
        self.mlp2.visit(&format!("{name}.mlp2"), f);
    }

    fn visit_mut(&mut self, name: &str, f: &mut impl FnMut(String, &mut Array2<f64>)) {
        f(format!("{name}.ln1_g"), &mut self.ln1_g);
        f(format!("{name}.ln1_b"), &mut self.ln1_b);
        self.wq.visit_mut(&format!("{name}.wq"), f);
        f(format!("{name}.wk.w"), &mut self.wk);
        self.wv.visit_mut(&format!("{name}.wv"), f);
        self.wo.visit_mut(&format!("{name}.wo"), f);
        f(format!("{name}.ln2_g"), &mut self.ln2_g);
        f(format!("{name}.ln2_b"), &mut self.ln2_b);
        self.mlp1.visit_mut(&format!("{name}.mlp1"), f);
        self.mlp2.visit_mut(&format!("{name}.mlp2"), f);
    }
}

/// Input embedding: per-position affine for continuous designs, symbol
/// table plus learned positions for sequences.
#[derive(Debug, Clone)]
pub enum TokenizerParams {
    Continuous { w: Array2<f64>, p: Array2<f64> },
    Discrete { table: Array2<f64>, pos: Array2<f64> },
}

impl TokenizerParams {
    fn visit<'a>(&'a self, f: &mut impl FnMut(String, &'a Array2<f64>)) {
        match self {
            TokenizerParams::Continuous { w, p } => {
                f("tokenizer.w".into(), w);
                f("tokenizer.p".into(), p);
            }
            TokenizerParams::Discrete { table, pos } => {
                f("tokenizer.table".into(), table);
                f("tokenizer.pos".into(), pos);
            }
        }
    }

    fn visit_mut(&mut self, f: &mut impl FnMut(String, &mut Array2<f64>)) {
        match self {
            TokenizerParams::Continuous { w, p } => {
                f("tokenizer.w".into(), w);
                f("tokenizer.p".into(), p);
            }
            TokenizerParams::Discrete { table, pos } => {
                f("tokenizer.table".into(), table);
                f("tokenizer.pos".into(), pos);
            }
        }
    }
}

/// Shared clique-predictor MLP: two hidden layers and a scalar head.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub l1: Linear,
    pub l2: Linear,
    pub l3: Linear,
}

impl Mlp {
    pub fn init(rng: &mut SeededRng, d_in: usize, hidden: usize, d_out: usize) -> Self {
        Self {
            l1: Linear::init(rng, d_in, hidden),
            l2: Linear::init(rng, hidden, hidden),
            l3: Linear::init(rng, hidden, d_out),
        }
    }

    pub fn visit<'a>(&'a self, name: &str, f: &mut impl FnMut(String, &'a Array2<f64>)) {
        self.l1.visit(&format!("{name}.l1"), f);
        self.l2.visit(&format!("{name}.l2"), f);
        self.l3.visit(&format!("{name}.l3"), f);
    }

    pub fn visit_mut(&mut self, name: &str, f: &mut impl FnMut(String, &mut Array2<f64>)) {
        self.l1.visit_mut(&format!("{name}.l1"), f);
        self.l2.visit_mut(&format!("{name}.l2"), f);
        self.l3.visit_mut(&format!("{name}.l3"), f);
    }
}

/// All learnable tensors. `visit`/`visit_mut` define the canonical tensor
/// order used by the optimizer, gradient extraction, and checkpoints.
#[derive(Debug, Clone)]
pub struct CliqueformerParams {
    pub tokenizer: TokenizerParams,
    pub encoder: Vec<BlockParams>,
    pub enc_ln_g: Array2<f64>,
    pub enc_ln_b: Array2<f64>,
    pub posterior: Linear,
    pub predictor: Mlp,
    pub dec_embed: Linear,
    pub decoder: Vec<BlockParams>,
    pub dec_ln_g: Array2<f64>,
    pub dec_ln_b: Array2<f64>,
    pub out_head: Linear,
}

impl CliqueformerParams {
    pub fn init(cfg: &CliqueformerConfig, rng: &mut SeededRng) -> Self {
        let dm = cfg.d_model;
        let d_z = cfg.layout.latent_dim();
        let n_clique = cfg.layout.n_clique();
        let seq_len = cfg.seq_len();
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
        Self {
            tokenizer,
            encoder: (0..cfg.n_blocks).map(|_| BlockParams::init(rng, dm)).collect(),
            enc_ln_g: Array2::ones((1, dm)),
            enc_ln_b: Array2::zeros((1, dm)),
            posterior: Linear::init(rng, seq_len * dm, 2 * d_z),
            predictor: Mlp::init(
                rng,
                cfg.layout.d_clique() + cfg.clique_embed_dim(),
                cfg.mlp_hidden,
                1,
            ),
            dec_embed: Linear::init(rng, cfg.layout.d_clique(), dm),
            decoder: (0..cfg.n_blocks).map(|_| BlockParams::init(rng, dm)).collect(),
            dec_ln_g: Array2::ones((1, dm)),
            dec_ln_b: Array2::zeros((1, dm)),
            out_head: Linear::init(rng, n_clique * dm, cfg.output_dim()),
        }
    }

    pub fn visit<'a>(&'a self, f: &mut impl FnMut(String, &'a Array2<f64>)) {
        self.tokenizer.visit(f);
        for (i, b) in self.encoder.iter().enumerate() {
            b.visit(&format!("encoder.{i}"), f);
        }
        f("enc_ln_g".into(), &self.enc_ln_g);
        f("enc_ln_b".into(), &self.enc_ln_b);
        self.posterior.visit("posterior", f);
        self.predictor.visit("predictor", f);
        self.dec_embed.visit("dec_embed", f);
        for (i, b) in self.decoder.iter().enumerate() {
            b.visit(&format!("decoder.{i}"), f);
        }
        f("dec_ln_g".into(), &self.dec_ln_g);
        f("dec_ln_b".into(), &self.dec_ln_b);
        self.out_head.visit("out_head", f);
    }

    pub fn visit_mut(&mut self, f: &mut impl FnMut(String, &mut Array2<f64>)) {
        self.tokenizer.visit_mut(f);
        for (i, b) in self.encoder.iter_mut().enumerate() {
            b.visit_mut(&format!("encoder.{i}"), f);
        }
        f("enc_ln_g".into(), &mut self.enc_ln_g);
        f("enc_ln_b".into(), &mut self.enc_ln_b);
        self.posterior.visit_mut("posterior", f);
        self.predictor.visit_mut("predictor", f);
        self.dec_embed.visit_mut("dec_embed", f);
        for (i, b) in self.decoder.iter_mut().enumerate() {
            b.visit_mut(&format!("decoder.{i}"), f);
        }
        f("dec_ln_g".into(), &mut self.dec_ln_g);
        f("dec_ln_b".into(), &mut self.dec_ln_b);
        self.out_head.visit_mut("out_head", f);
    }

    pub fn named_tensors(&self) -> Vec<(String, &Array2<f64>)> {
        let mut out = Vec::new();
        self.visit(&mut |name, t| out.push((name, t)));
        out
    }

    pub fn tensors(&self) -> Vec<&Array2<f64>> {
        let mut out = Vec::new();
        self.visit(&mut |_, t| out.push(t));
        out
    }

    /// Mutable references to all tensors in the same canonical order as
    /// `visit` (checked by a pointer-identity test).
    pub fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
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
        for b in &mut self.encoder {
            push_block(&mut out, b);
        }
        out.push(&mut self.enc_ln_g);
        out.push(&mut self.enc_ln_b);
        push_linear(&mut out, &mut self.posterior);
        push_linear(&mut out, &mut self.predictor.l1);
        push_linear(&mut out, &mut self.predictor.l2);
        push_linear(&mut out, &mut self.predictor.l3);
        push_linear(&mut out, &mut self.dec_embed);
        for b in &mut self.decoder {
            push_block(&mut out, b);
        }
        out.push(&mut self.dec_ln_g);
        out.push(&mut self.dec_ln_b);
        push_linear(&mut out, &mut self.out_head);
        out
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Order-sensitive checksum used to verify parameter immutability.
    pub fn checksum(&self) -> u64 {
        let mut acc = 0u64;
        self.visit(&mut |_, t| {
            for &x in t.iter() {
                acc = acc.wrapping_mul(31).wrapping_add(x.to_bits());
            }
        });
        acc
    }
}

fn push_linear<'a>(out: &mut Vec<&'a mut Array2<f64>>, lin: &'a mut Linear) {
    out.push(&mut lin.w);
    out.push(&mut lin.b);
}

fn push_block<'a>(out: &mut Vec<&'a mut Array2<f64>>, b: &'a mut BlockParams) {
    out.push(&mut b.ln1_g);
    out.push(&mut b.ln1_b);
    push_linear(out, &mut b.wq);
    out.push(&mut b.wk);
    push_linear(out, &mut b.wv);
    push_linear(out, &mut b.wo);
    out.push(&mut b.ln2_g);
    out.push(&mut b.ln2_b);
    push_linear(out, &mut b.mlp1);
    push_linear(out, &mut b.mlp2);
}
