//! Gaussian-process surrogate with a Matérn-5/2 kernel.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Observation noise variance on the standardized scale.
pub const NOISE: f64 = 1e-6;

/// Length scales tried by the likelihood search.
pub const LENGTH_SCALES: [f64; 9] = [0.25, 0.35, 0.5, 0.7, 1.0, 1.4, 2.0, 2.8, 4.0];

fn matern52(d2: f64, ell: f64) -> f64 {
    let r = 5f64.sqrt() * d2.sqrt() / ell;
    (1.0 + r + r * r / 3.0) * (-r).exp()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Posterior of a zero-mean unit-variance GP fitted to standardized targets.
#[derive(Debug, Clone)]
pub struct GpSurrogate {
    x: Vec<Vec<f64>>,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    length_scale: f64,
    mean: f64,
    scale: f64,
    log_likelihood: f64,
}

impl GpSurrogate {
    fn factor(x: &[Vec<f64>], z: &DVector<f64>, ell: f64) -> Option<(Cholesky<f64, Dyn>, DVector<f64>, f64)> {
        let n = x.len();
        let k = DMatrix::from_fn(n, n, |i, j| matern52(sq_dist(&x[i], &x[j]), ell) + if i == j { NOISE } else { 0.0 });
        let chol = k.cholesky()?;
        let alpha = chol.solve(z);
        let logdet: f64 = chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum();
        let ll = -0.5 * z.dot(&alpha) - logdet - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
        Some((chol, alpha, ll))
    }

    /// Fits to `(x, y)` pairs, choosing the length scale that maximizes the
    /// marginal likelihood over [`LENGTH_SCALES`].
    pub fn fit(x: &[Vec<f64>], y: &[f64]) -> Result<Self> {
        if x.is_empty() || x.len() != y.len() {
            return Err(Error::Search(format!("gp fit with {} inputs and {} targets", x.len(), y.len())));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Search("gp targets must be finite".into()));
        }
        let n = y.len() as f64;
        let mean = y.iter().sum::<f64>() / n;
        let var = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let scale = if var > 0.0 { var.sqrt() } else { 1.0 };
        let z = DVector::from_iterator(y.len(), y.iter().map(|v| (v - mean) / scale));
        let mut best: Option<Self> = None;
        for ell in LENGTH_SCALES {
            let Some((chol, alpha, ll)) = Self::factor(x, &z, ell) else { continue };
            if best.as_ref().is_none_or(|b| ll > b.log_likelihood) {
                best = Some(Self {
                    x: x.to_vec(),
                    chol,
                    alpha,
                    length_scale: ell,
                    mean,
                    scale,
                    log_likelihood: ll,
                });
            }
        }
        best.ok_or_else(|| Error::Search("gp covariance is not positive definite".into()))
    }

    pub fn length_scale(&self) -> f64 {
        self.length_scale
    }

    pub fn log_likelihood(&self) -> f64 {
        self.log_likelihood
    }

    /// Posterior mean and standard deviation in the original units.
    pub fn predict(&self, x: &[f64]) -> (f64, f64) {
        let k = DVector::from_iterator(self.x.len(), self.x.iter().map(|xi| matern52(sq_dist(xi, x), self.length_scale)));
        let mu = k.dot(&self.alpha);
        let v = self
            .chol
            .l_dirty()
            .solve_lower_triangular(&k)
            .expect("cholesky factor has a positive diagonal");
        let var = (1.0 + NOISE - v.norm_squared()).max(0.0);
        (self.mean + self.scale * mu, self.scale * var.sqrt())
    }

    /// [`predict`](Self::predict) for many points with one triangular solve.
    pub fn predict_many(&self, xs: &[Vec<f64>]) -> Vec<(f64, f64)> {
        if xs.is_empty() {
            return Vec::new();
        }
        let ks = DMatrix::from_fn(self.x.len(), xs.len(), |i, j| matern52(sq_dist(&self.x[i], &xs[j]), self.length_scale));
        let mu = ks.tr_mul(&self.alpha);
        let v = self
            .chol
            .l_dirty()
            .solve_lower_triangular(&ks)
            .expect("cholesky factor has a positive diagonal");
        (0..xs.len())
            .map(|j| {
                let var = (1.0 + NOISE - v.column(j).norm_squared()).max(0.0);
                (self.mean + self.scale * mu[j], self.scale * var.sqrt())
            })
            .collect()
    }
}
