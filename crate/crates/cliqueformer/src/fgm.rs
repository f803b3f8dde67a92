//! Chain clique layouts over latent dimensions.
//!
//! A layout places `n_clique` cliques of `d_clique` contiguous latent
//! indices each, with consecutive cliques overlapping in `d_knot` indices
//! (the knots). The total latent dimensionality follows as
//! `d_z = d_knot + n_clique * (d_clique - d_knot)`.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::ops::Range;

/// Pre-defined chain of partially overlapping cliques over latent indices.
///
/// Immutable after construction; cheap to clone and safe to share.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CliqueLayout {
    n_clique: usize,
    d_clique: usize,
    d_knot: usize,
    d_z: usize,
}

impl CliqueLayout {
    /// Chain layout: clique `i` (1-based) covers latent indices
    /// `[(i-1)(d_clique-d_knot), (i-1)(d_clique-d_knot) + d_clique)`.
    pub fn chain(n_clique: usize, d_clique: usize, d_knot: usize) -> Result<Self> {
        if n_clique == 0 {
            return Err(Error::Config("n_clique must be >= 1".into()));
        }
        if d_clique == 0 {
            return Err(Error::Config("d_clique must be >= 1".into()));
        }
        if d_knot >= d_clique {
            return Err(Error::Config(format!(
                "d_knot ({d_knot}) must be < d_clique ({d_clique})"
            )));
        }
        let d_z = d_knot + n_clique * (d_clique - d_knot);
        Ok(Self {
            n_clique,
            d_clique,
            d_knot,
            d_z,
        })
    }

    pub fn n_clique(&self) -> usize {
        self.n_clique
    }

    pub fn d_clique(&self) -> usize {
        self.d_clique
    }

    pub fn d_knot(&self) -> usize {
        self.d_knot
    }

    /// Total latent dimensionality `d_z`.
    pub fn latent_dim(&self) -> usize {
        self.d_z
    }

    /// Contiguous index range of clique `i` (1-based).
    pub fn clique_range(&self, i: usize) -> Result<Range<usize>> {
        if i == 0 || i > self.n_clique {
            return Err(Error::Config(format!(
                "clique index {i} out of range 1..={}",
                self.n_clique
            )));
        }
        let start = (i - 1) * (self.d_clique - self.d_knot);
        Ok(start..start + self.d_clique)
    }

    /// Ordered latent indices of clique `i` (1-based).
    pub fn clique_indices(&self, i: usize) -> Result<Vec<usize>> {
        Ok(self.clique_range(i)?.collect())
    }

    /// Per-latent-index count of containing cliques. Interior knots of a
    /// chain belong to two cliques, all other indices to one.
    pub fn knot_multiplicity(&self) -> Vec<usize> {
        let mut mult = vec![0usize; self.d_z];
        for i in 1..=self.n_clique {
            for k in self.clique_range(i).expect("valid clique index") {
                mult[k] += 1;
            }
        }
        mult
    }
}
