//! Steady Darcy flow `-∇·(K∇u) = 0` with log-normal permeability.
//!
//! Finite volumes on the node grid: each node owns a cell, halved along
//! Neumann edges, and face permeabilities are arithmetic means of the two
//! adjacent nodes. Flux boundaries follow the mirror-ghost closure, so the
//! discrete solution zeroes the central2 residual used for training.

use picnn_tensor::io::TensorData;
use picnn_tensor::CsrMatrix;
use serde::{Deserialize, Serialize};

use super::grf::{kl_expansion, sample_grf, GrfSpec};
use super::poisson::CG_TOL;
use super::{par_map, GridSample, RawSplits, SparseSystem, SplitCounts};
use crate::error::{Error, Result};
use crate::pde::{BoundarySpec, EdgeCondition, Geometry, PdeKind};
use crate::rng::stream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DarcySpec {
    /// Spec of `log K`.
    pub log_k: GrfSpec,
    pub u_left: f64,
    pub u_right: f64,
    pub counts: SplitCounts,
}

impl Default for DarcySpec {
    fn default() -> Self {
        Self {
            log_k: GrfSpec {
                sigma0: 1.0,
                length_scale: 0.5,
                n_modes: 64,
                rows: 32,
                cols: 32,
            },
            u_left: 1.0,
            u_right: 0.0,
            counts: SplitCounts {
                train: 128,
                validation: 32,
                test: 64,
            },
        }
    }
}

/// Pressure drop from left to right, no flow through top and bottom.
pub fn darcy_bc(rows: usize, cols: usize, u_left: f64, u_right: f64) -> BoundarySpec {
    BoundarySpec {
        top: EdgeCondition::neumann(cols, 0.0),
        bottom: EdgeCondition::neumann(cols, 0.0),
        left: EdgeCondition::dirichlet(rows, u_left),
        right: EdgeCondition::dirichlet(rows, u_right),
        geometry: Geometry::Cartesian {
            dx: 1.0 / (cols - 1) as f64,
            dy: 1.0 / (rows - 1) as f64,
        },
    }
}

fn flux_of(e: &EdgeCondition, t: usize) -> f64 {
    match e {
        EdgeCondition::Neumann { flux } => flux[t],
        _ => 0.0,
    }
}

/// Assembles the symmetric system over all non-Dirichlet nodes.
pub fn darcy_system(k: &[f64], bc: &BoundarySpec, rows: usize, cols: usize) -> Result<(SparseSystem, Vec<usize>)> {
    bc.validate(rows, cols)?;
    if [&bc.top, &bc.bottom, &bc.left, &bc.right].iter().any(|e| e.is_periodic()) {
        return Err(Error::invalid("darcy", "periodic edges are not supported"));
    }
    if k.len() != rows * cols || k.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(Error::invalid("darcy", "permeability must be positive on every node"));
    }
    let (dy, dx) = bc.geometry.spacing(rows, cols);
    let mut index = vec![usize::MAX; rows * cols];
    let mut nodes = Vec::new();
    for i in 0..rows {
        for j in 0..cols {
            if !bc.is_dirichlet_node(i, j, rows, cols) {
                index[i * cols + j] = nodes.len();
                nodes.push(i * cols + j);
            }
        }
    }
    let kbar = |p: usize, q: usize| 0.5 * (k[p] + k[q]);
    let mut mat = Vec::with_capacity(nodes.len());
    let mut rhs = Vec::with_capacity(nodes.len());
    for &p in &nodes {
        let (i, j) = (p / cols, p % cols);
        // half cells along flux edges
        let wy = if i == 0 || i == rows - 1 { 0.5 } else { 1.0 };
        let wx = if j == 0 || j == cols - 1 { 0.5 } else { 1.0 };
        let mut diag = 0.0;
        let mut row = Vec::with_capacity(5);
        let mut b = 0.0;
        let mut couple = |q: usize, c: f64, row: &mut Vec<(usize, f64)>, b: &mut f64| {
            diag += c;
            match index[q] {
                usize::MAX => *b += c * bc.dirichlet_value(q / cols, q % cols, rows, cols).expect("fixed node"),
                iq => row.push((iq, -c)),
            }
        };
        for (dj, edge) in [(-1isize, &bc.left), (1, &bc.right)] {
            let jj = j as isize + dj;
            if (0..cols as isize).contains(&jj) {
                let q = i * cols + jj as usize;
                couple(q, wy * kbar(p, q) / (dx * dx), &mut row, &mut b);
            } else {
                let inner = i * cols + (j as isize - dj) as usize;
                b += wy * kbar(p, inner) * flux_of(edge, i) / dx;
            }
        }
        for (di, edge) in [(-1isize, &bc.top), (1, &bc.bottom)] {
            let ii = i as isize + di;
            if (0..rows as isize).contains(&ii) {
                let q = ii as usize * cols + j;
                couple(q, wx * kbar(p, q) / (dy * dy), &mut row, &mut b);
            } else {
                let inner = (i as isize - di) as usize * cols + j;
                b += wx * kbar(p, inner) * flux_of(edge, j) / dy;
            }
        }
        row.push((index[p], diag));
        mat.push(row);
        rhs.push(b);
    }
    Ok((
        SparseSystem {
            matrix: CsrMatrix::from_rows(nodes.len(), &mat)?,
            rhs,
        },
        nodes,
    ))
}

pub fn solve_darcy_fv(k: &[f64], bc: &BoundarySpec, rows: usize, cols: usize) -> Result<Vec<f64>> {
    let (sys, nodes) = darcy_system(k, bc, rows, cols)?;
    let (x, _) = sys.solve(CG_TOL, 50 * rows * cols)?;
    let mut u: Vec<f64> = (0..rows * cols)
        .map(|p| bc.dirichlet_value(p / cols, p % cols, rows, cols).unwrap_or(0.0))
        .collect();
    for (n, &p) in nodes.iter().enumerate() {
        u[p] = x[n];
    }
    Ok(u)
}

/// Discrete flux `Σ_i w_i dy K̄ (u_{i,j} - u_{i,j+1}) / dx` through each
/// vertical cut between columns `j` and `j+1`.
pub fn darcy_flux_cuts(k: &[f64], u: &[f64], rows: usize, cols: usize, dy: f64, dx: f64) -> Vec<f64> {
    (0..cols - 1)
        .map(|j| {
            (0..rows)
                .map(|i| {
                    let w = if i == 0 || i == rows - 1 { 0.5 } else { 1.0 };
                    let (p, q) = (i * cols + j, i * cols + j + 1);
                    w * dy * 0.5 * (k[p] + k[q]) * (u[p] - u[q]) / dx
                })
                .sum()
        })
        .collect()
}

/// `K = exp(GRF)` inputs with finite-volume references.
pub fn gen_darcy_dataset(spec: &DarcySpec, seed: u64, workers: usize) -> Result<RawSplits> {
    let basis = kl_expansion(&spec.log_k)?;
    let (rows, cols) = (spec.log_k.rows, spec.log_k.cols);
    let bc = darcy_bc(rows, cols, spec.u_left, spec.u_right);
    let c = spec.counts;
    let all = par_map(c.train + c.validation + c.test, workers, |g| {
        let k: Vec<f64> = sample_grf(&basis, &mut stream(seed, "darcy/log_k", g as u64))
            .into_iter()
            .map(f64::exp)
            .collect();
        let u = solve_darcy_fv(&k, &bc, rows, cols)?;
        GridSample::new(
            TensorData::new(vec![1, 1, rows, cols], k)?,
            TensorData::new(vec![1, 1, rows, cols], u)?,
            bc.clone(),
        )
    })?;
    let mut it = all.into_iter();
    Ok(RawSplits {
        kind: PdeKind::Darcy,
        train: it.by_ref().take(c.train).collect(),
        validation: it.by_ref().take(c.validation).collect(),
        test: it.collect(),
    })
}
