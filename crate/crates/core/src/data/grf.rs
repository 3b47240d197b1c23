//! Gaussian random fields on `[0,1]²` via a truncated Karhunen-Loève expansion.
//!
//! The squared-exponential covariance `σ0² exp(-|x - x'|² / l²)` factors into
//! a product of 1-D kernels along rows and columns, so the grid covariance is
//! the Kronecker product `σ0² (C_y ⊗ C_x)`. Its eigenpairs are products of the
//! 1-D eigenpairs, which keeps the decomposition cheap at 64×64.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrfSpec {
    pub sigma0: f64,
    pub length_scale: f64,
    pub n_modes: usize,
    pub rows: usize,
    pub cols: usize,
}

impl GrfSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma0 >= 0.0 && self.length_scale > 0.0) {
            return Err(Error::invalid("grf", format!("sigma0 {} / length scale {}", self.sigma0, self.length_scale)));
        }
        if self.rows == 0 || self.cols == 0 || self.n_modes == 0 || self.n_modes > self.rows * self.cols {
            return Err(Error::invalid(
                "grf",
                format!("{} modes on a {}x{} grid", self.n_modes, self.rows, self.cols),
            ));
        }
        Ok(())
    }
}

/// Leading eigenpairs of the discrete covariance, eigenvalues nonincreasing.
#[derive(Debug, Clone, PartialEq)]
pub struct KlBasis {
    pub rows: usize,
    pub cols: usize,
    pub eigenvalues: Vec<f64>,
    /// Row-major `rows × cols` fields, orthonormal in the Euclidean inner product.
    pub modes: Vec<Vec<f64>>,
}

fn axis_points(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.0];
    }
    (0..n).map(|k| k as f64 / (n - 1) as f64).collect()
}

fn axis_eigen(n: usize, l: f64) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let t = axis_points(n);
    let c = DMatrix::from_fn(n, n, |a, b| (-(t[a] - t[b]).powi(2) / (l * l)).exp());
    let eig = SymmetricEigen::try_new(c, f64::EPSILON, 10_000)
        .ok_or_else(|| Error::Eigen(format!("{n}x{n} axis covariance")))?;
    let mut vecs = eig.eigenvectors;
    // fix the sign so the largest-magnitude entry is positive
    for mut col in vecs.column_iter_mut() {
        let pivot = col.iter().copied().fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
        if pivot < 0.0 {
            col.neg_mut();
        }
    }
    // 1-D SE kernels are numerically semidefinite; round-off negatives are clipped
    let vals = eig.eigenvalues.iter().map(|v| v.max(0.0)).collect();
    Ok((vals, vecs))
}

pub fn kl_expansion(spec: &GrfSpec) -> Result<KlBasis> {
    spec.validate()?;
    let (vy, ey) = axis_eigen(spec.rows, spec.length_scale)?;
    let (vx, ex) = axis_eigen(spec.cols, spec.length_scale)?;
    let s2 = spec.sigma0 * spec.sigma0;
    let mut pairs: Vec<(f64, usize, usize)> = Vec::with_capacity(spec.rows * spec.cols);
    for (a, &la) in vy.iter().enumerate() {
        for (b, &lb) in vx.iter().enumerate() {
            pairs.push((s2 * la * lb, a, b));
        }
    }
    pairs.sort_by(|p, q| q.0.total_cmp(&p.0).then((p.1, p.2).cmp(&(q.1, q.2))));
    pairs.truncate(spec.n_modes);
    let modes = pairs
        .iter()
        .map(|&(_, a, b)| {
            let mut m = Vec::with_capacity(spec.rows * spec.cols);
            for i in 0..spec.rows {
                for j in 0..spec.cols {
                    m.push(ey[(i, a)] * ex[(j, b)]);
                }
            }
            m
        })
        .collect();
    Ok(KlBasis {
        rows: spec.rows,
        cols: spec.cols,
        eigenvalues: pairs.iter().map(|p| p.0).collect(),
        modes,
    })
}

/// `Σ √λ_i φ_i ω_i` for given coefficients `ω` (one per mode).
pub fn sample_grf_with(basis: &KlBasis, omega: &[f64]) -> Vec<f64> {
    assert_eq!(omega.len(), basis.modes.len(), "one coefficient per mode");
    let mut f = vec![0.0; basis.rows * basis.cols];
    for ((lam, phi), w) in basis.eigenvalues.iter().zip(&basis.modes).zip(omega) {
        let a = lam.sqrt() * w;
        f.iter_mut().zip(phi).for_each(|(v, p)| *v += a * p);
    }
    f
}

/// Draws standard-normal coefficients from `rng`.
pub fn sample_grf(basis: &KlBasis, rng: &mut impl Rng) -> Vec<f64> {
    let omega: Vec<f64> = (0..basis.modes.len()).map(|_| rng.sample(StandardNormal)).collect();
    sample_grf_with(basis, &omega)
}
