//! Jacobi-preconditioned conjugate gradients for the reference solutions.

use picnn_tensor::CsrMatrix;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PcgReport {
    pub iterations: usize,
    /// `‖b - Ax‖ / ‖b‖` at exit.
    pub relative_residual: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solves `Ax = b` for symmetric positive-definite `A`, starting from `x`.
pub fn pcg(a: &CsrMatrix, b: &[f64], x: &mut [f64], tol: f64, max_iter: usize) -> Result<PcgReport> {
    let n = b.len();
    assert!(a.nrows == n && a.ncols == n && x.len() == n, "system dimensions");
    let bnorm = dot(b, b).sqrt();
    if bnorm == 0.0 {
        x.fill(0.0);
        return Ok(PcgReport {
            iterations: 0,
            relative_residual: 0.0,
        });
    }
    let inv_diag: Vec<f64> = a.diagonal().iter().map(|d| 1.0 / d).collect();
    let mut ax = vec![0.0; n];
    a.matvec_into(x, &mut ax);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(ri, di)| ri * di).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    let mut rel = dot(&r, &r).sqrt() / bnorm;
    for it in 0..max_iter {
        if rel < tol {
            return Ok(PcgReport {
                iterations: it,
                relative_residual: rel,
            });
        }
        a.matvec_into(&p, &mut ap);
        let alpha = rz / dot(&p, &ap);
        for k in 0..n {
            x[k] += alpha * p[k];
            r[k] -= alpha * ap[k];
        }
        rel = dot(&r, &r).sqrt() / bnorm;
        for k in 0..n {
            z[k] = r[k] * inv_diag[k];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for k in 0..n {
            p[k] = z[k] + beta * p[k];
        }
    }
    if rel < tol {
        return Ok(PcgReport {
            iterations: max_iter,
            relative_residual: rel,
        });
    }
    Err(Error::NoConvergence {
        iterations: max_iter,
        residual: rel,
    })
}

/// An assembled finite-difference system.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSystem {
    pub matrix: CsrMatrix,
    pub rhs: Vec<f64>,
}

impl SparseSystem {
    /// Structural checks: square, symmetric, positive diagonal.
    pub fn check(&self) -> Result<()> {
        let a = &self.matrix;
        if a.nrows != a.ncols || a.nrows != self.rhs.len() {
            return Err(Error::invalid("sparse_system", format!("{}x{} with rhs {}", a.nrows, a.ncols, self.rhs.len())));
        }
        if let Some(i) = a.diagonal().iter().position(|d| !(*d > 0.0)) {
            return Err(Error::invalid("sparse_system", format!("nonpositive diagonal at row {i}")));
        }
        for i in 0..a.nrows {
            for (j, v) in a.row(i) {
                let t = a.row(j).find(|e| e.0 == i).map_or(0.0, |e| e.1);
                if (t - v).abs() > 1e-12 * v.abs().max(1.0) {
                    return Err(Error::invalid("sparse_system", format!("asymmetric at ({i}, {j})")));
                }
            }
        }
        Ok(())
    }

    /// CG to relative residual `tol`, capped at `max_iter` iterations.
    pub fn solve(&self, tol: f64, max_iter: usize) -> Result<(Vec<f64>, PcgReport)> {
        let mut x = vec![0.0; self.rhs.len()];
        let rep = pcg(&self.matrix, &self.rhs, &mut x, tol, max_iter)?;
        Ok((x, rep))
    }
}
