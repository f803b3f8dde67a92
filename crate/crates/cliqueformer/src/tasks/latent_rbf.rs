//! Synthetic latent-RBF benchmark suite.
//!
//! Scores live on a hidden chain of 3-dimensional cliques over a latent
//! vector z ~ N(0, I): y(z) sums per-clique mixtures of radial basis
//! functions. Observed designs are x = T(z) = concat(z, tanh(Wz + b)), so
//! the valid designs form a manifold; a proposed design is valid exactly
//! when its tail is consistent with its head under T.

use crate::error::{Error, Result};
use crate::fgm::CliqueLayout;
use crate::rng::SeededRng;
use crate::tasks::{Dataset, DesignView, Designs, Oracle, ScoreStats};
use ndarray::{s, Array1, Array2, ArrayView1};

/// Generation parameters. Defaults: 4 RBF centers per clique with unit
/// width, mixing weights U[0.5, 1.5], observed dimension 2 * d_z.
#[derive(Debug, Clone)]
pub struct LatentRbfConfig {
    pub n_triangles: usize,
    pub observed_dim: usize,
    pub n_samples: usize,
    pub centers_per_clique: usize,
    pub sigma_rbf: f64,
    pub eps_valid: f64,
}

impl LatentRbfConfig {
    /// Standard instance for a given triangle count: d_z = 2n+1, d = 2*d_z.
    pub fn standard(n_triangles: usize, n_samples: usize) -> Self {
        let d_z = 2 * n_triangles + 1;
        Self {
            n_triangles,
            observed_dim: 2 * d_z,
            n_samples,
            centers_per_clique: 4,
            sigma_rbf: 1.0,
            eps_valid: DEFAULT_EPS_VALID,
        }
    }
}

/// Validity tolerance on the tail residual (infinity norm).
pub const DEFAULT_EPS_VALID: f64 = 1e-3;

/// A sampled latent-RBF task: hidden clique layout, per-clique RBF mixture
/// parameters, and the fixed observation transform.
#[derive(Debug, Clone)]
pub struct LatentRbfTask {
    layout: CliqueLayout,
    /// Per clique: (centers_per_clique, 3) RBF centers.
    centers: Vec<Array2<f64>>,
    /// Per clique: mixing weights.
    weights: Vec<Array1<f64>>,
    sigma_rbf: f64,
    /// Observation transform: x = concat(z, tanh(Wz + b)).
    w: Array2<f64>,
    b: Array1<f64>,
    observed_dim: usize,
    eps_valid: f64,
    seed: u64,
}

impl LatentRbfTask {
    pub fn layout(&self) -> &CliqueLayout {
        &self.layout
    }

    pub fn latent_dim(&self) -> usize {
        self.layout.latent_dim()
    }

    pub fn observed_dim(&self) -> usize {
        self.observed_dim
    }

    pub fn eps_valid(&self) -> f64 {
        self.eps_valid
    }

    /// Same task with a different validity tolerance.
    pub fn with_eps_valid(mut self, eps_valid: f64) -> Self {
        self.eps_valid = eps_valid;
        self
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub(crate) fn parts(
        &self,
    ) -> (
        &CliqueLayout,
        &[Array2<f64>],
        &[Array1<f64>],
        f64,
        &Array2<f64>,
        &Array1<f64>,
        usize,
        f64,
        u64,
    ) {
        (
            &self.layout,
            &self.centers,
            &self.weights,
            self.sigma_rbf,
            &self.w,
            &self.b,
            self.observed_dim,
            self.eps_valid,
            self.seed,
        )
    }

    pub(crate) fn from_parts(
        layout: CliqueLayout,
        centers: Vec<Array2<f64>>,
        weights: Vec<Array1<f64>>,
        sigma_rbf: f64,
        w: Array2<f64>,
        b: Array1<f64>,
        observed_dim: usize,
        eps_valid: f64,
        seed: u64,
    ) -> Self {
        Self {
            layout,
            centers,
            weights,
            sigma_rbf,
            w,
            b,
            observed_dim,
            eps_valid,
            seed,
        }
    }

    /// Contribution of clique `i` (1-based) at the clique slice `z_c`.
    pub fn clique_term(&self, i: usize, z_c: ArrayView1<f64>) -> f64 {
        let centers = &self.centers[i - 1];
        let weights = &self.weights[i - 1];
        let two_sigma_sq = 2.0 * self.sigma_rbf * self.sigma_rbf;
        let mut total = 0.0;
        for (k, center) in centers.rows().into_iter().enumerate() {
            let dist_sq: f64 = z_c
                .iter()
                .zip(center.iter())
                .map(|(&a, &b)| (a - b) * (a - b))
                .sum();
            total += weights[k] * (-dist_sq / two_sigma_sq).exp();
        }
        total
    }

    /// Hidden score y(z): sum of per-clique RBF mixtures.
    pub fn raw_value(&self, z: ArrayView1<f64>) -> f64 {
        (1..=self.layout.n_clique())
            .map(|i| {
                let range = self.layout.clique_range(i).expect("valid clique");
                self.clique_term(i, z.slice(s![range]))
            })
            .sum()
    }

    /// Observation transform T(z) = concat(z, tanh(Wz + b)).
    pub fn transform(&self, z: ArrayView1<f64>) -> Result<Array1<f64>> {
        let d_z = self.latent_dim();
        if z.len() != d_z {
            return Err(Error::Shape(format!(
                "latent length {} vs d_z {}",
                z.len(),
                d_z
            )));
        }
        let tail = (self.w.dot(&z) + &self.b).mapv(f64::tanh);
        let mut x = Array1::zeros(self.observed_dim);
        x.slice_mut(s![..d_z]).assign(&z);
        x.slice_mut(s![d_z..]).assign(&tail);
        Ok(x)
    }

    /// Recover z from x when x lies on the manifold: takes the head
    /// coordinates and accepts iff the tail residual is within eps_valid
    /// in infinity norm.
    pub fn invert_or_reject(&self, x: ArrayView1<f64>) -> Result<Option<Array1<f64>>> {
        if x.len() != self.observed_dim {
            return Err(Error::Shape(format!(
                "design length {} vs observed dim {}",
                x.len(),
                self.observed_dim
            )));
        }
        let d_z = self.latent_dim();
        let z = x.slice(s![..d_z]).to_owned();
        let expected_tail = (self.w.dot(&z) + &self.b).mapv(f64::tanh);
        let residual = x
            .slice(s![d_z..])
            .iter()
            .zip(expected_tail.iter())
            .map(|(&a, &b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        Ok(if residual <= self.eps_valid { Some(z) } else { None })
    }

    /// Oracle handle normalizing against the given visible-data stats.
    pub fn oracle(&self, stats: ScoreStats) -> RbfOracle {
        RbfOracle {
            task: self.clone(),
            stats,
        }
    }
}

/// Pure scoring handle: invalid designs score 0, valid designs are scored
/// by the hidden RBF value of the recovered latent, min-max normalized.
#[derive(Debug, Clone)]
pub struct RbfOracle {
    task: LatentRbfTask,
    stats: ScoreStats,
}

impl RbfOracle {
    pub fn stats(&self) -> ScoreStats {
        self.stats
    }

    pub fn task(&self) -> &LatentRbfTask {
        &self.task
    }

    pub fn score_design(&self, x: ArrayView1<f64>) -> (f64, bool) {
        match self.task.invert_or_reject(x) {
            Ok(Some(z)) => {
                let y = self.task.raw_value(z.view());
                (self.stats.normalize(y).expect("non-degenerate stats"), true)
            }
            _ => (0.0, false),
        }
    }
}

impl Oracle for RbfOracle {
    fn score(&self, design: DesignView<'_>) -> (f64, bool) {
        match design {
            DesignView::Continuous(x) => self.score_design(x),
            DesignView::Discrete(_) => (0.0, false),
        }
    }
}

/// Sample a task and its offline dataset. The latent layout is a chain of
/// `n_triangles` 3-wide cliques overlapping in one knot, so
/// d_z = 2 * n_triangles + 1.
pub fn generate_latent_rbf(
    cfg: &LatentRbfConfig,
    seed: u64,
) -> Result<(LatentRbfTask, Dataset)> {
    if cfg.n_triangles == 0 {
        return Err(Error::Config("n_triangles must be >= 1".into()));
    }
    let layout = CliqueLayout::chain(cfg.n_triangles, 3, 1)?;
    let d_z = layout.latent_dim();
    if cfg.observed_dim <= d_z {
        return Err(Error::Config(format!(
            "observed_dim {} must exceed d_z {}",
            cfg.observed_dim, d_z
        )));
    }
    if cfg.n_samples == 0 {
        return Err(Error::Config("n_samples must be >= 1".into()));
    }
    if cfg.sigma_rbf <= 0.0 {
        return Err(Error::Config("sigma_rbf must be positive".into()));
    }

    let root = SeededRng::new(seed);
    let mut rbf_rng = root.split(0);
    let mut obs_rng = root.split(1);
    let mut data_rng = root.split(2);

    let centers: Vec<Array2<f64>> = (0..cfg.n_triangles)
        .map(|_| rbf_rng.normal_mat(cfg.centers_per_clique, 3, 1.0))
        .collect();
    let weights: Vec<Array1<f64>> = (0..cfg.n_triangles)
        .map(|_| Array1::from_iter((0..cfg.centers_per_clique).map(|_| rbf_rng.uniform(0.5, 1.5))))
        .collect();

    let tail_dim = cfg.observed_dim - d_z;
    let w = obs_rng.normal_mat(tail_dim, d_z, (1.0 / d_z as f64).sqrt());
    let b = obs_rng.normal_vec(tail_dim);

    let task = LatentRbfTask {
        layout,
        centers,
        weights,
        sigma_rbf: cfg.sigma_rbf,
        w,
        b,
        observed_dim: cfg.observed_dim,
        eps_valid: cfg.eps_valid,
        seed,
    };

    let mut xs = Array2::zeros((cfg.n_samples, cfg.observed_dim));
    let mut ys = Array1::zeros(cfg.n_samples);
    for i in 0..cfg.n_samples {
        let z = data_rng.normal_vec(d_z);
        ys[i] = task.raw_value(z.view());
        xs.row_mut(i).assign(&task.transform(z.view())?);
    }
    let dataset = Dataset::new(Designs::Continuous(xs), ys)?;
    Ok((task, dataset))
}
