//! Numerical demonstration that additive structure is a property of the
//! input parameterization, not of the function: the same scalar function
//! has all pairwise interactions in one standard-normal parameterization
//! and none in a rotated one.

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

/// Central-difference step for the mixed partials.
const FD_STEP: f64 = 1e-4;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RotationReport {
    pub l: usize,
    /// Largest |d^2 f_v / dv_i dv_j| over probes and i != j (expect ~ 0).
    pub max_offdiag_v: f64,
    /// Smallest |d^2 f_z / dz_i dz_j| over probes and i != j (expect > 0).
    pub min_offdiag_z: f64,
    /// Largest |d f_v / dv_k| for k >= 2 (expect ~ 0).
    pub max_grad_v_rest: f64,
    /// min_offdiag_z / max(max_offdiag_v, 1e-12).
    pub dependence_gap: f64,
}

/// Orthonormal matrix whose first row is the normalized all-ones vector,
/// completed by Gram-Schmidt over the standard basis.
fn rotation_with_mean_row(l: usize) -> Array2<f64> {
    let mut rows: Vec<Array1<f64>> = Vec::with_capacity(l);
    rows.push(Array1::from_elem(l, 1.0 / (l as f64).sqrt()));
    let mut basis_idx = 0usize;
    while rows.len() < l {
        let mut v = Array1::zeros(l);
        v[basis_idx] = 1.0;
        basis_idx += 1;
        for r in &rows {
            let proj = r.dot(&v);
            v = &v - &(r * proj);
        }
        let norm = v.dot(&v).sqrt();
        if norm > 1e-8 {
            rows.push(v / norm);
        }
    }
    let mut m = Array2::zeros((l, l));
    for (i, r) in rows.iter().enumerate() {
        m.row_mut(i).assign(r);
    }
    m
}

fn f_z(z: &Array1<f64>) -> f64 {
    let l = z.len() as f64;
    (z.sum() / l.sqrt()).exp()
}

fn mixed_partial(f: &dyn Fn(&Array1<f64>) -> f64, x: &Array1<f64>, i: usize, j: usize) -> f64 {
    let h = FD_STEP;
    let mut xpp = x.clone();
    xpp[i] += h;
    xpp[j] += h;
    let mut xpm = x.clone();
    xpm[i] += h;
    xpm[j] -= h;
    let mut xmp = x.clone();
    xmp[i] -= h;
    xmp[j] += h;
    let mut xmm = x.clone();
    xmm[i] -= h;
    xmm[j] -= h;
    (f(&xpp) - f(&xpm) - f(&xmp) + f(&xmm)) / (4.0 * h * h)
}

fn partial(f: &dyn Fn(&Array1<f64>) -> f64, x: &Array1<f64>, k: usize) -> f64 {
    let h = FD_STEP;
    let mut xp = x.clone();
    xp[k] += h;
    let mut xm = x.clone();
    xm[k] -= h;
    (f(&xp) - f(&xm)) / (2.0 * h)
}

/// Estimate the interaction structure of f_z(z) = exp(sum z / sqrt(l)) in
/// the original coordinates and in rotated coordinates where the first
/// axis aligns with the mean direction.
pub fn rotation_demo(l: usize, n_probes: usize, seed: u64) -> Result<RotationReport> {
    if l < 2 {
        return Err(Error::Config(format!("l = {l} must be >= 2")));
    }
    if n_probes == 0 {
        return Err(Error::Config("n_probes must be >= 1".into()));
    }
    let rotation = rotation_with_mean_row(l);
    let rotation_t = rotation.t().to_owned();
    let f_v = move |v: &Array1<f64>| -> f64 {
        let z = rotation_t.dot(v);
        f_z(&z)
    };

    let mut rng = SeededRng::new(seed);
    let mut max_offdiag_v = 0.0f64;
    let mut min_offdiag_z = f64::INFINITY;
    let mut max_grad_v_rest = 0.0f64;
    for _ in 0..n_probes {
        // modest probe radius keeps the exponential well-conditioned
        let x = rng.normal_vec(l) * 0.5;
        for i in 0..l {
            for j in (i + 1)..l {
                let dv = mixed_partial(&f_v, &x, i, j).abs();
                max_offdiag_v = max_offdiag_v.max(dv);
                let dz = mixed_partial(&f_z, &x, i, j).abs();
                min_offdiag_z = min_offdiag_z.min(dz);
            }
        }
        for k in 1..l {
            max_grad_v_rest = max_grad_v_rest.max(partial(&f_v, &x, k).abs());
        }
    }
    Ok(RotationReport {
        l,
        max_offdiag_v,
        min_offdiag_z,
        max_grad_v_rest,
        dependence_gap: min_offdiag_z / max_offdiag_v.max(1e-12),
    })
}
