//! Graph construction for the surrogate's forward passes.

use crate::model::{clique_embedding_matrix, Activation, Cliqueformer, Mode, Modality};
use crate::numerics::gaussian::{LOG_VAR_MAX, LOG_VAR_MIN};
use crate::numerics::graph::{Gradients, Graph, Var};
use crate::rng::SeededRng;
use crate::tasks::Designs;
use ndarray::{Array2, Axis};

const LEAKY_SLOPE: f64 = 0.3;

/// A mini-batch of designs in model input form.
#[derive(Debug, Clone)]
pub enum Batch {
    /// (B, d) design rows.
    Continuous(Array2<f64>),
    /// One-hot rows flattened to (B*L, V) plus the integer sequences.
    Discrete {
        onehot_flat: Array2<f64>,
        seqs: Vec<Vec<usize>>,
        vocab: usize,
    },
}

impl Batch {
    pub fn from_designs(designs: &Designs, indices: &[usize]) -> Self {
        match designs {
            Designs::Continuous(x) => Batch::Continuous(x.select(Axis(0), indices)),
            Designs::Discrete { seqs, vocab } => {
                let picked: Vec<Vec<usize>> = indices.iter().map(|&i| seqs[i].clone()).collect();
                Batch::from_seqs(picked, *vocab)
            }
        }
    }

    pub fn from_seqs(seqs: Vec<Vec<usize>>, vocab: usize) -> Self {
        let l = seqs.first().map_or(0, |s| s.len());
        let n = seqs.len();
        let mut onehot_flat = Array2::zeros((n * l, vocab));
        for (i, s) in seqs.iter().enumerate() {
            for (pos, &c) in s.iter().enumerate() {
                onehot_flat[(i * l + pos, c)] = 1.0;
            }
        }
        Batch::Discrete {
            onehot_flat,
            seqs,
            vocab,
        }
    }

    pub fn batch_size(&self) -> usize {
        match self {
            Batch::Continuous(x) => x.nrows(),
            Batch::Discrete { seqs, .. } => seqs.len(),
        }
    }

    /// Flattened integer targets (example-major) for the decoder loss.
    pub fn targets_flat(&self) -> Option<Vec<usize>> {
        match self {
            Batch::Continuous(_) => None,
            Batch::Discrete { seqs, .. } => Some(seqs.iter().flatten().cloned().collect()),
        }
    }
}

struct LinearV {
    w: Var,
    b: Var,
}

struct BlockV {
    ln1_g: Var,
    ln1_b: Var,
    wq: LinearV,
    wk: Var,
    wv: LinearV,
    wo: LinearV,
    ln2_g: Var,
    ln2_b: Var,
    mlp1: LinearV,
    mlp2: LinearV,
}

struct MlpV {
    l1: LinearV,
    l2: LinearV,
    l3: LinearV,
}

struct ParamVars {
    tokenizer: (Var, Var),
    encoder: Vec<BlockV>,
    enc_ln_g: Var,
    enc_ln_b: Var,
    posterior: LinearV,
    predictor: MlpV,
    dec_embed: LinearV,
    decoder: Vec<BlockV>,
    dec_ln_g: Var,
    dec_ln_b: Var,
    out_head: LinearV,
}

struct Cursor {
    vars: Vec<Var>,
    pos: usize,
}

impl Cursor {
    fn next(&mut self) -> Var {
        let v = self.vars[self.pos];
        self.pos += 1;
        v
    }

    fn linear(&mut self) -> LinearV {
        LinearV {
            w: self.next(),
            b: self.next(),
        }
    }

    fn block(&mut self) -> BlockV {
        BlockV {
            ln1_g: self.next(),
            ln1_b: self.next(),
            wq: self.linear(),
            wk: self.next(),
            wv: self.linear(),
            wo: self.linear(),
            ln2_g: self.next(),
            ln2_b: self.next(),
            mlp1: self.linear(),
            mlp2: self.linear(),
        }
    }

    fn mlp(&mut self) -> MlpV {
        MlpV {
            l1: self.linear(),
            l2: self.linear(),
            l3: self.linear(),
        }
    }
}

/// One recorded forward pass. Leafifies all parameters on construction so
/// gradients can be pulled out in the canonical tensor order afterwards.
pub struct ForwardPass<'m> {
    pub graph: Graph,
    model: &'m Cliqueformer,
    pv: ParamVars,
    all_vars: Vec<Var>,
    mode: Mode,
    dropout_rng: Option<SeededRng>,
}

impl<'m> ForwardPass<'m> {
    /// `rng` drives dropout masks and must be provided in train mode.
    pub fn new(model: &'m Cliqueformer, mode: Mode, rng: Option<SeededRng>) -> Self {
        assert!(
            mode == Mode::Eval || model.cfg.dropout == 0.0 || rng.is_some(),
            "train mode with dropout requires an rng"
        );
        let mut graph = Graph::new();
        let mut vars = Vec::new();
        model.params.visit(&mut |_, t| {
            vars.push(graph.leaf(t.clone()));
        });
        let all_vars = vars.clone();
        let mut cursor = Cursor { vars, pos: 0 };
        let n_blocks = model.cfg.n_blocks;
        let pv = ParamVars {
            tokenizer: (cursor.next(), cursor.next()),
            encoder: (0..n_blocks).map(|_| cursor.block()).collect(),
            enc_ln_g: cursor.next(),
            enc_ln_b: cursor.next(),
            posterior: cursor.linear(),
            predictor: cursor.mlp(),
            dec_embed: cursor.linear(),
            decoder: (0..n_blocks).map(|_| cursor.block()).collect(),
            dec_ln_g: cursor.next(),
            dec_ln_b: cursor.next(),
            out_head: cursor.linear(),
        };
        assert_eq!(cursor.pos, cursor.vars.len(), "parameter cursor mismatch");
        Self {
            graph,
            model,
            pv,
            all_vars,
            mode,
            dropout_rng: rng,
        }
    }

    fn affine(&mut self, x: Var, lin: &LinearV) -> Var {
        let y = self.graph.matmul(x, lin.w);
        self.graph.add_row(y, lin.b)
    }

    fn activation(&mut self, x: Var) -> Var {
        match self.model.cfg.activation {
            Activation::Gelu => self.graph.gelu(x),
            Activation::LeakyRelu => self.graph.leaky_relu(x, LEAKY_SLOPE),
        }
    }

    fn dropout(&mut self, x: Var) -> Var {
        let rate = self.model.cfg.dropout;
        if self.mode == Mode::Eval || rate == 0.0 {
            return x;
        }
        let (rows, cols) = self.graph.value(x).dim();
        let mask = self
            .dropout_rng
            .as_mut()
            .expect("train mode rng")
            .dropout_mask(rows, cols, rate);
        self.graph.dropout(x, mask)
    }

    fn layer_norm_affine(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let n = self.graph.layer_norm(x);
        let n = self.graph.mul_row(n, gamma);
        self.graph.add_row(n, beta)
    }

    fn transformer_block(&mut self, h: Var, seq_len: usize, enc: bool, idx: usize) -> Var {
        let n_heads = self.model.cfg.n_heads;
        let b = if enc {
            &self.pv.encoder[idx]
        } else {
            &self.pv.decoder[idx]
        };
        // copy the small Var handles so `self` can be reborrowed
        let (ln1_g, ln1_b, ln2_g, ln2_b) = (b.ln1_g, b.ln1_b, b.ln2_g, b.ln2_b);
        let wk_w = b.wk;
        let (wq, wv, wo) = (
            LinearV { w: b.wq.w, b: b.wq.b },
            LinearV { w: b.wv.w, b: b.wv.b },
            LinearV { w: b.wo.w, b: b.wo.b },
        );
        let (mlp1, mlp2) = (
            LinearV { w: b.mlp1.w, b: b.mlp1.b },
            LinearV { w: b.mlp2.w, b: b.mlp2.b },
        );

        let a = self.layer_norm_affine(h, ln1_g, ln1_b);
        let q = self.affine(a, &wq);
        let k = self.graph.matmul(a, wk_w);
        let v = self.affine(a, &wv);
        let att = self.graph.attention(q, k, v, n_heads, seq_len);
        let o = self.affine(att, &wo);
        let o = self.dropout(o);
        let h = self.graph.add(h, o);

        let m = self.layer_norm_affine(h, ln2_g, ln2_b);
        let m1 = self.affine(m, &mlp1);
        let m1 = self.activation(m1);
        let m1 = self.dropout(m1);
        let m2 = self.affine(m1, &mlp2);
        let m2 = self.dropout(m2);
        self.graph.add(h, m2)
    }

    /// Map a batch of designs to (B * seq_len, d_model) tokens.
    pub fn tokenize(&mut self, batch: &Batch) -> Var {
        match (batch, &self.model.cfg.modality) {
            (Batch::Continuous(x), Modality::Continuous { dim }) => {
                assert_eq!(x.ncols(), *dim, "tokenize: design width");
                let xl = self.graph.leaf(x.clone());
                let (w, p) = self.pv.tokenizer;
                self.graph.scale_embed(xl, w, p)
            }
            (
                Batch::Discrete {
                    onehot_flat, vocab, ..
                },
                Modality::Discrete {
                    vocab: v, seq_len, ..
                },
            ) => {
                assert_eq!(vocab, v, "tokenize: vocabulary");
                assert_eq!(onehot_flat.nrows() % seq_len, 0, "tokenize: sequence length");
                let oh = self.graph.leaf(onehot_flat.clone());
                let (table, pos) = self.pv.tokenizer;
                let tok = self.graph.matmul(oh, table);
                self.graph.tile_rows(tok, pos)
            }
            _ => panic!("tokenize: batch modality does not match model modality"),
        }
    }

    /// Posterior over the latent: returns (mean, clamped log-variance),
    /// each of shape (B, d_z).
    pub fn encode(&mut self, batch: &Batch) -> (Var, Var) {
        let seq_len = self.model.cfg.seq_len();
        let d_model = self.model.cfg.d_model;
        let d_z = self.model.cfg.layout.latent_dim();
        let batch_size = batch.batch_size();

        let mut h = self.tokenize(batch);
        for i in 0..self.model.cfg.n_blocks {
            h = self.transformer_block(h, seq_len, true, i);
        }
        let (g_f, b_f) = (self.pv.enc_ln_g, self.pv.enc_ln_b);
        let h = self.layer_norm_affine(h, g_f, b_f);
        let flat = self.graph.reshape(h, batch_size, seq_len * d_model);
        let posterior = LinearV {
            w: self.pv.posterior.w,
            b: self.pv.posterior.b,
        };
        let stats = self.affine(flat, &posterior);
        let mu = self.graph.slice_cols(stats, 0, d_z);
        let logvar_raw = self.graph.slice_cols(stats, d_z, 2 * d_z);
        let logvar = self.graph.clamp(logvar_raw, LOG_VAR_MIN, LOG_VAR_MAX);
        (mu, logvar)
    }

    /// z = mu + exp(logvar / 2) * eps on the tape.
    pub fn reparam(&mut self, mu: Var, logvar: Var, eps: Array2<f64>) -> Var {
        let half = self.graph.scale(logvar, 0.5);
        let std = self.graph.exp(half);
        let eps_leaf = self.graph.leaf(eps);
        let noise = self.graph.mul(std, eps_leaf);
        self.graph.add(mu, noise)
    }

    /// Per-clique predictor outputs before averaging: (B, n_clique).
    pub fn predict_per_clique(&mut self, z: Var) -> Var {
        let layout = &self.model.cfg.layout;
        let n_clique = layout.n_clique();
        let d_clique = layout.d_clique();
        let starts: Vec<usize> = (1..=n_clique)
            .map(|i| layout.clique_range(i).expect("valid clique").start)
            .collect();
        let embed = clique_embedding_matrix(
            n_clique,
            self.model.cfg.clique_embed_dim(),
            self.model.cfg.d_model,
        )
        .expect("even embed width");
        let batch = self.graph.value(z).nrows();

        let rows = self.graph.clique_rows(z, &starts, d_clique, Some(embed));
        let predictor = MlpV {
            l1: LinearV { w: self.pv.predictor.l1.w, b: self.pv.predictor.l1.b },
            l2: LinearV { w: self.pv.predictor.l2.w, b: self.pv.predictor.l2.b },
            l3: LinearV { w: self.pv.predictor.l3.w, b: self.pv.predictor.l3.b },
        };
        let h = self.affine(rows, &predictor.l1);
        let h = self.activation(h);
        let h = self.dropout(h);
        let h = self.affine(h, &predictor.l2);
        let h = self.activation(h);
        let h = self.dropout(h);
        let out = self.affine(h, &predictor.l3);
        self.graph.reshape(out, batch, n_clique)
    }

    /// Clique-averaged surrogate value: (B, 1).
    pub fn predict(&mut self, z: Var) -> Var {
        let per = self.predict_per_clique(z);
        self.graph.row_mean(per)
    }

    /// Decode latent rows to design space: (B, d) reconstruction means for
    /// continuous data or (B, L*V) logits for sequences.
    pub fn decode(&mut self, z: Var) -> Var {
        let layout = &self.model.cfg.layout;
        let n_clique = layout.n_clique();
        let d_clique = layout.d_clique();
        let d_model = self.model.cfg.d_model;
        let starts: Vec<usize> = (1..=n_clique)
            .map(|i| layout.clique_range(i).expect("valid clique").start)
            .collect();
        let batch = self.graph.value(z).nrows();

        let slices = self.graph.clique_rows(z, &starts, d_clique, None);
        let dec_embed = LinearV {
            w: self.pv.dec_embed.w,
            b: self.pv.dec_embed.b,
        };
        let tok = self.affine(slices, &dec_embed);
        let trig = clique_embedding_matrix(n_clique, d_model, d_model).expect("even d_model");
        let trig_leaf = self.graph.leaf(trig);
        let mut h = self.graph.tile_rows(tok, trig_leaf);
        for i in 0..self.model.cfg.n_blocks {
            h = self.transformer_block(h, n_clique, false, i);
        }
        let (g_f, b_f) = (self.pv.dec_ln_g, self.pv.dec_ln_b);
        let h = self.layer_norm_affine(h, g_f, b_f);
        let flat = self.graph.reshape(h, batch, n_clique * d_model);
        let out_head = LinearV {
            w: self.pv.out_head.w,
            b: self.pv.out_head.b,
        };
        self.affine(flat, &out_head)
    }

    /// Gradients for every parameter tensor, in canonical order; missing
    /// gradients materialize as zeros.
    pub fn param_grads(&self, grads: &mut Gradients) -> Vec<Array2<f64>> {
        self.all_vars
            .iter()
            .map(|&v| {
                let shape = self.graph.value(v).dim();
                grads.take(v, shape)
            })
            .collect()
    }

    pub fn param_vars(&self) -> &[Var] {
        &self.all_vars
    }
}
