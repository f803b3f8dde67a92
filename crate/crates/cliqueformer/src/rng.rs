//! Deterministic seeded randomness with independent child streams.
//!
//! Every stochastic stage of the pipeline (data generation, weight init,
//! shuffling, dropout, posterior noise, clique draws) pulls from its own
//! child stream so that stages stay reproducible independently of each
//! other's consumption order.

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic RNG: identical seed gives an identical stream, and
/// `split` derives independent child streams by index.
#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Child stream for sub-task `index`; children of distinct indices are
    /// distinct and do not advance this stream.
    pub fn split(&self, index: u64) -> Self {
        let child = splitmix64(self.seed ^ splitmix64(index ^ 0xA24B_AED4_963E_E407));
        Self::new(child)
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    pub fn normal_vec(&mut self, n: usize) -> Array1<f64> {
        Array1::from_iter((0..n).map(|_| self.standard_normal()))
    }

    pub fn normal_mat(&mut self, rows: usize, cols: usize, std: f64) -> Array2<f64> {
        Array2::from_shape_fn((rows, cols), |_| std * self.standard_normal())
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        self.inner.gen_range(lo..hi)
    }

    pub fn index(&mut self, n: usize) -> usize {
        self.inner.gen_range(0..n)
    }

    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        xs.shuffle(&mut self.inner);
    }

    /// Inverted-scaling dropout mask: entries are 0 with probability `rate`,
    /// otherwise 1/(1-rate).
    pub fn dropout_mask(&mut self, rows: usize, cols: usize, rate: f64) -> Array2<f64> {
        assert!((0.0..1.0).contains(&rate), "dropout rate must be in [0,1)");
        if rate == 0.0 {
            return Array2::ones((rows, cols));
        }
        let keep = 1.0 - rate;
        let scale = 1.0 / keep;
        Array2::from_shape_fn((rows, cols), |_| {
            if self.inner.gen::<f64>() < keep {
                scale
            } else {
                0.0
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = SeededRng::new(7);
        let mut b = SeededRng::new(7);
        for _ in 0..100 {
            assert_eq!(a.standard_normal().to_bits(), b.standard_normal().to_bits());
        }
    }

    #[test]
    fn children_of_distinct_indices_differ() {
        let root = SeededRng::new(42);
        let mut seen = std::collections::HashSet::new();
        for i in 0..1000 {
            assert!(seen.insert(root.split(i).seed()), "child seed collision at {i}");
        }
        // splitting does not advance the parent
        let mut a = SeededRng::new(42);
        let _ = a.split(3);
        let mut b = SeededRng::new(42);
        assert_eq!(a.standard_normal().to_bits(), b.standard_normal().to_bits());
    }

    #[test]
    fn dropout_mask_is_inverted_scaling() {
        let mut rng = SeededRng::new(1);
        let mask = rng.dropout_mask(100, 100, 0.5);
        for &m in mask.iter() {
            assert!(m == 0.0 || m == 2.0);
        }
        let keep_frac = mask.iter().filter(|&&m| m != 0.0).count() as f64 / 10_000.0;
        assert!((keep_frac - 0.5).abs() < 0.05);
    }
}
