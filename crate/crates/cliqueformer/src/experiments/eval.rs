//! Candidate evaluation: top-k mean of oracle-normalized scores plus the
//! validity fraction.

use crate::error::{Error, Result};
use crate::tasks::{Designs, Oracle};
use serde::{Deserialize, Serialize};

/// Evaluation metric: which k and candidate count the protocol uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Metric {
    /// Mean of the top 10 of 1000 candidates (empirical top 1%).
    #[default]
    Top10Of1000,
    /// Maximum of 128 candidates.
    Top1Of128,
    Custom {
        top_k: usize,
        candidate_count: usize,
    },
}

impl Metric {
    pub fn top_k(&self) -> usize {
        match self {
            Metric::Top10Of1000 => 10,
            Metric::Top1Of128 => 1,
            Metric::Custom { top_k, .. } => *top_k,
        }
    }

    pub fn candidate_count(&self) -> usize {
        match self {
            Metric::Top10Of1000 => 1000,
            Metric::Top1Of128 => 128,
            Metric::Custom {
                candidate_count, ..
            } => *candidate_count,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "top10of1000" => Ok(Metric::Top10Of1000),
            "top1of128" => Ok(Metric::Top1Of128),
            other => Err(Error::Config(format!("unknown metric '{other}'"))),
        }
    }

    pub fn name(&self) -> String {
        match self {
            Metric::Top10Of1000 => "top10of1000".into(),
            Metric::Top1Of128 => "top1of128".into(),
            Metric::Custom {
                top_k,
                candidate_count,
            } => format!("top{top_k}of{candidate_count}"),
        }
    }
}

/// One evaluation outcome (one seed).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalRow {
    /// Mean of the top-k normalized oracle scores.
    pub score: f64,
    /// Standard deviation across the k retained scores.
    pub score_std: f64,
    /// Fraction of candidates that were valid.
    pub validity: f64,
    /// The k retained scores, descending.
    pub top_scores: Vec<f64>,
}

/// Score every candidate with the oracle (invalid designs score 0) and
/// aggregate the top `top_k`.
pub fn evaluate_candidates(
    oracle: &dyn Oracle,
    candidates: &Designs,
    top_k: usize,
) -> Result<EvalRow> {
    let n = candidates.len();
    if n == 0 {
        return Err(Error::Data("no candidates to evaluate".into()));
    }
    if top_k == 0 || top_k > n {
        return Err(Error::Config(format!("top_k {top_k} out of 1..={n}")));
    }
    let mut scores = Vec::with_capacity(n);
    let mut valid_count = 0usize;
    for i in 0..n {
        let (score, valid) = oracle.score(candidates.view(i));
        if valid {
            valid_count += 1;
        }
        scores.push(score);
    }
    scores.sort_by(|a, b| b.partial_cmp(a).expect("finite scores"));
    let top_scores: Vec<f64> = scores[..top_k].to_vec();
    let score = top_scores.iter().sum::<f64>() / top_k as f64;
    let var = top_scores
        .iter()
        .map(|s| (s - score) * (s - score))
        .sum::<f64>()
        / top_k as f64;
    Ok(EvalRow {
        score,
        score_std: var.sqrt(),
        validity: valid_count as f64 / n as f64,
        top_scores,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasks::DesignView;
    use ndarray::Array2;

    /// Test oracle: scores the first coordinate, valid iff it is >= 0.
    struct FirstCoord;

    impl Oracle for FirstCoord {
        fn score(&self, design: DesignView<'_>) -> (f64, bool) {
            match design {
                DesignView::Continuous(x) => {
                    if x[0] >= 0.0 {
                        (x[0], true)
                    } else {
                        (0.0, false)
                    }
                }
                DesignView::Discrete(_) => (0.0, false),
            }
        }
    }

    #[test]
    fn all_invalid_scores_zero() {
        let mut x = Array2::zeros((5, 2));
        x.column_mut(0).fill(-1.0);
        let row = evaluate_candidates(&FirstCoord, &Designs::Continuous(x), 3).unwrap();
        assert_eq!(row.score, 0.0);
        assert_eq!(row.validity, 0.0);
    }

    #[test]
    fn top_k_mean_of_known_values() {
        let mut x = Array2::zeros((6, 2));
        for (i, v) in [0.1, 0.9, 0.5, 0.7, 0.3, 0.2].iter().enumerate() {
            x[(i, 0)] = *v;
        }
        let row = evaluate_candidates(&FirstCoord, &Designs::Continuous(x), 2).unwrap();
        assert!((row.score - 0.8).abs() < 1e-12);
        assert_eq!(row.validity, 1.0);
        assert_eq!(row.top_scores, vec![0.9, 0.7]);
        assert!((row.score_std - 0.1).abs() < 1e-12);
    }

    #[test]
    fn metric_parsing_and_shapes() {
        assert_eq!(Metric::parse("top10of1000").unwrap(), Metric::Top10Of1000);
        assert_eq!(Metric::parse("top1of128").unwrap(), Metric::Top1Of128);
        assert!(Metric::parse("bogus").is_err());
        assert_eq!(Metric::Top1Of128.top_k(), 1);
        assert_eq!(Metric::Top1Of128.candidate_count(), 128);
    }

    #[test]
    fn top_k_must_fit() {
        let x = Array2::zeros((3, 2));
        assert!(evaluate_candidates(&FirstCoord, &Designs::Continuous(x), 4).is_err());
    }
}
