//! Benchmark tasks: datasets with score normalization, the latent-RBF
//! synthetic suite, and TFBind-8 ingestion.

pub mod latent_rbf;
pub mod tfbind;

use crate::error::{Error, Result};
use ndarray::{Array1, Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

pub use latent_rbf::{generate_latent_rbf, LatentRbfConfig, LatentRbfTask, RbfOracle};
pub use tfbind::{load_tfbind8, TfBindOracle, TfBindTable};

/// Min/max of the visible scores; normalization maps them onto [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreStats {
    pub y_min: f64,
    pub y_max: f64,
}

impl ScoreStats {
    pub fn from_scores(scores: &Array1<f64>) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::Data("no scores to compute stats over".into()));
        }
        let y_min = scores.iter().cloned().fold(f64::INFINITY, f64::min);
        let y_max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        Ok(Self { y_min, y_max })
    }

    /// Affine map (y - y_min) / (y_max - y_min). Values outside the visible
    /// range land outside [0, 1]; a result above 1 beats the visible best.
    pub fn normalize(&self, y: f64) -> Result<f64> {
        if self.y_max <= self.y_min {
            return Err(Error::Data(format!(
                "degenerate stats: y_min {} >= y_max {}",
                self.y_min, self.y_max
            )));
        }
        Ok((y - self.y_min) / (self.y_max - self.y_min))
    }
}

/// Design matrix for either modality.
#[derive(Debug, Clone)]
pub enum Designs {
    /// (N, d) real-valued designs.
    Continuous(Array2<f64>),
    /// Integer sequences with symbols in [0, vocab).
    Discrete { seqs: Vec<Vec<usize>>, vocab: usize },
}

impl Designs {
    pub fn len(&self) -> usize {
        match self {
            Designs::Continuous(x) => x.nrows(),
            Designs::Discrete { seqs, .. } => seqs.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn view(&self, i: usize) -> DesignView<'_> {
        match self {
            Designs::Continuous(x) => DesignView::Continuous(x.row(i)),
            Designs::Discrete { seqs, .. } => DesignView::Discrete(&seqs[i]),
        }
    }
}

/// Borrowed single design.
#[derive(Debug, Clone, Copy)]
pub enum DesignView<'a> {
    Continuous(ArrayView1<'a, f64>),
    Discrete(&'a [usize]),
}

/// Black-box scorer: returns the normalized value and a validity flag.
/// Invalid designs receive a value of 0. Implementations are pure.
pub trait Oracle: Sync {
    fn score(&self, design: DesignView<'_>) -> (f64, bool);
}

/// Offline dataset of designs and raw scores plus normalization stats over
/// the visible (post-filter) scores.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub designs: Designs,
    pub scores: Array1<f64>,
    pub stats: ScoreStats,
}

impl Dataset {
    pub fn new(designs: Designs, scores: Array1<f64>) -> Result<Self> {
        if designs.len() != scores.len() {
            return Err(Error::Shape(format!(
                "{} designs vs {} scores",
                designs.len(),
                scores.len()
            )));
        }
        if designs.is_empty() {
            return Err(Error::Data("dataset must hold at least one example".into()));
        }
        if let Designs::Discrete { seqs, vocab } = &designs {
            for s in seqs {
                if s.iter().any(|&c| c >= *vocab) {
                    return Err(Error::Data("sequence symbol out of vocabulary".into()));
                }
            }
        }
        let stats = ScoreStats::from_scores(&scores)?;
        Ok(Self {
            designs,
            scores,
            stats,
        })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Keep rows with score strictly below the empirical `p`-quantile
    /// (linear interpolation); `p = 1` keeps everything. Stats are
    /// recomputed over the retained rows.
    pub fn percentile_filter(&self, p: f64) -> Result<Dataset> {
        if !(0.0..=1.0).contains(&p) || p == 0.0 {
            return Err(Error::Config(format!("percentile p={p} out of (0, 1]")));
        }
        if p == 1.0 {
            return Ok(self.clone());
        }
        let cutoff = quantile_linear(&self.scores, p);
        let keep: Vec<usize> = (0..self.len())
            .filter(|&i| self.scores[i] < cutoff)
            .collect();
        if keep.is_empty() {
            return Err(Error::Data(format!(
                "percentile filter at p={p} would empty the dataset"
            )));
        }
        let scores = Array1::from_iter(keep.iter().map(|&i| self.scores[i]));
        let designs = match &self.designs {
            Designs::Continuous(x) => Designs::Continuous(x.select(Axis(0), &keep)),
            Designs::Discrete { seqs, vocab } => Designs::Discrete {
                seqs: keep.iter().map(|&i| seqs[i].clone()).collect(),
                vocab: *vocab,
            },
        };
        Dataset::new(designs, scores)
    }
}

/// Empirical quantile with linear interpolation between order statistics.
pub fn quantile_linear(scores: &Array1<f64>, p: f64) -> f64 {
    let mut sorted: Vec<f64> = scores.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite scores"));
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = p * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let frac = pos - lo as f64;
    if lo + 1 >= n {
        sorted[n - 1]
    } else {
        sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
    }
}

/// One-hot encode integer sequences into an (N, L*V) matrix; each
/// positional V-block holds a single 1.
pub fn one_hot_encode(seqs: &[Vec<usize>], vocab: usize) -> Array2<f64> {
    let n = seqs.len();
    let l = seqs.first().map_or(0, |s| s.len());
    let mut out = Array2::zeros((n, l * vocab));
    for (i, s) in seqs.iter().enumerate() {
        for (pos, &c) in s.iter().enumerate() {
            out[(i, pos * vocab + c)] = 1.0;
        }
    }
    out
}

/// Decode an (L*V)-wide row back to a sequence by per-block argmax.
pub fn argmax_decode(row: ArrayView1<f64>, vocab: usize) -> Vec<usize> {
    let l = row.len() / vocab;
    (0..l)
        .map(|pos| {
            let block = row.slice(ndarray::s![pos * vocab..(pos + 1) * vocab]);
            block
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite logits"))
                .map(|(idx, _)| idx)
                .expect("non-empty block")
        })
        .collect()
}
