//! The clique-structured transformer surrogate: tokenizer, transformer
//! encoder emitting a diagonal-Gaussian latent posterior, a shared
//! clique-predictor MLP with trigonometric clique embeddings, and a
//! transformer decoder back to design space.

pub mod forward;
pub mod params;

use crate::error::{Error, Result};
use crate::fgm::CliqueLayout;
use crate::rng::SeededRng;
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

pub use forward::{Batch, ForwardPass};
pub use params::{BlockParams, CliqueformerParams, Linear, Mlp, TokenizerParams};

/// Input/output data type of the surrogate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Modality {
    Continuous { dim: usize },
    Discrete { seq_len: usize, vocab: usize },
}

/// Nonlinearity used in MLPs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Activation {
    #[default]
    Gelu,
    /// LeakyReLU with slope 0.3.
    LeakyRelu,
}

/// Dropout on/off switch for forward passes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CliqueformerConfig {
    pub d_model: usize,
    pub n_blocks: usize,
    pub n_heads: usize,
    pub mlp_hidden: usize,
    pub layout: CliqueLayout,
    pub dropout: f64,
    pub activation: Activation,
    pub modality: Modality,
}

impl CliqueformerConfig {
    /// Paper-default widths: d_model 64, 2 blocks, 2 heads, predictor
    /// hidden 256, dropout 0.5, GELU.
    pub fn new(layout: CliqueLayout, modality: Modality) -> Self {
        Self {
            d_model: 64,
            n_blocks: 2,
            n_heads: 2,
            mlp_hidden: 256,
            layout,
            dropout: 0.5,
            activation: Activation::Gelu,
            modality,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.d_model % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} out of [0,1)", self.dropout)));
        }
        if self.mlp_hidden == 0 {
            return Err(Error::Config("mlp_hidden must be >= 1".into()));
        }
        if self.n_blocks == 0 {
            return Err(Error::Config("n_blocks must be >= 1".into()));
        }
        match self.modality {
            Modality::Continuous { dim } => {
                if dim == 0 {
                    return Err(Error::Config("continuous dim must be >= 1".into()));
                }
            }
            Modality::Discrete { seq_len, vocab } => {
                if seq_len == 0 || vocab == 0 {
                    return Err(Error::Config("discrete seq_len and vocab must be >= 1".into()));
                }
            }
        }
        Ok(())
    }

    /// Encoder token count: one token per coordinate or sequence position.
    pub fn seq_len(&self) -> usize {
        match self.modality {
            Modality::Continuous { dim } => dim,
            Modality::Discrete { seq_len, .. } => seq_len,
        }
    }

    /// Width of the decoder output row.
    pub fn output_dim(&self) -> usize {
        match self.modality {
            Modality::Continuous { dim } => dim,
            Modality::Discrete { seq_len, vocab } => seq_len * vocab,
        }
    }

    /// Clique-embedding width for the predictor: d_clique rounded up to
    /// the next even number.
    pub fn clique_embed_dim(&self) -> usize {
        self.layout.d_clique().div_ceil(2) * 2
    }
}

/// Trigonometric clique embedding: pairs (sin(i * w_j), cos(i * w_j)) with
/// frequencies w_j = 10^(-8j / d_model), for 1-based clique index `i`.
pub fn clique_embedding(i: usize, embed_dim: usize, d_model: usize) -> Result<Array1<f64>> {
    if embed_dim % 2 != 0 {
        return Err(Error::Config(format!("embed_dim {embed_dim} must be even")));
    }
    let mut c = Array1::zeros(embed_dim);
    for j in 0..embed_dim / 2 {
        let omega = 10f64.powf(-8.0 * j as f64 / d_model as f64);
        let phase = i as f64 * omega;
        c[2 * j] = phase.sin();
        c[2 * j + 1] = phase.cos();
    }
    Ok(c)
}

/// Stacked per-clique embeddings, row i-1 for clique i.
pub fn clique_embedding_matrix(
    n_clique: usize,
    embed_dim: usize,
    d_model: usize,
) -> Result<Array2<f64>> {
    let mut m = Array2::zeros((n_clique, embed_dim));
    for i in 1..=n_clique {
        m.row_mut(i - 1).assign(&clique_embedding(i, embed_dim, d_model)?);
    }
    Ok(m)
}

/// Surrogate model: configuration plus parameters.
#[derive(Debug, Clone)]
pub struct Cliqueformer {
    pub cfg: CliqueformerConfig,
    pub params: CliqueformerParams,
}

impl Cliqueformer {
    pub fn new(cfg: CliqueformerConfig, rng: &mut SeededRng) -> Result<Self> {
        cfg.validate()?;
        let params = CliqueformerParams::init(&cfg, rng);
        Ok(Self { cfg, params })
    }

    pub fn param_count(&self) -> usize {
        self.params.param_count()
    }

    /// Posterior means and log-variances for a batch, dropout off.
    pub fn encode_eval(&self, batch: &Batch) -> (Array2<f64>, Array2<f64>) {
        let mut pass = ForwardPass::new(self, Mode::Eval, None);
        let (mu, logvar) = pass.encode(batch);
        (
            pass.graph.value(mu).to_owned(),
            pass.graph.value(logvar).to_owned(),
        )
    }

    /// Surrogate values for latent rows, dropout off.
    pub fn predict_eval(&self, z: &Array2<f64>) -> Array1<f64> {
        let mut pass = ForwardPass::new(self, Mode::Eval, None);
        let zl = pass.graph.leaf(z.clone());
        let y = pass.predict(zl);
        let v = pass.graph.value(y);
        Array1::from_iter(v.column(0).iter().cloned())
    }

    /// Per-clique predictor outputs (before averaging), dropout off.
    pub fn predict_per_clique_eval(&self, z: &Array2<f64>) -> Array2<f64> {
        let mut pass = ForwardPass::new(self, Mode::Eval, None);
        let zl = pass.graph.leaf(z.clone());
        let per = pass.predict_per_clique(zl);
        pass.graph.value(per).to_owned()
    }

    /// Decoder output rows (means or flattened logits), dropout off.
    pub fn decode_eval(&self, z: &Array2<f64>) -> Array2<f64> {
        let mut pass = ForwardPass::new(self, Mode::Eval, None);
        let zl = pass.graph.leaf(z.clone());
        let out = pass.decode(zl);
        pass.graph.value(out).to_owned()
    }
}
