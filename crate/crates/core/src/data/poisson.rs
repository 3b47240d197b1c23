//! Poisson problems `Δu + f = 0` with random sources and Dirichlet walls.

use picnn_tensor::io::TensorData;
use picnn_tensor::CsrMatrix;
use serde::{Deserialize, Serialize};

use super::grf::{kl_expansion, sample_grf, GrfSpec};
use super::{par_map, GridSample, RawSplits, SparseSystem, SplitCounts};
use crate::error::{Error, Result};
use crate::pde::{BoundarySpec, EdgeCondition, Geometry, PdeKind};
use crate::rng::stream;

pub const CG_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PoissonSpec {
    pub grf: GrfSpec,
    pub boundary_value: f64,
    pub counts: SplitCounts,
}

impl Default for PoissonSpec {
    fn default() -> Self {
        Self {
            grf: GrfSpec {
                sigma0: 50.0,
                length_scale: 0.5,
                n_modes: 10,
                rows: 30,
                cols: 30,
            },
            boundary_value: 10.0,
            counts: SplitCounts {
                train: 64,
                validation: 16,
                test: 64,
            },
        }
    }
}

/// Unit square, `rows × cols` nodes including the walls.
pub fn unit_square_bc(rows: usize, cols: usize, value: f64) -> BoundarySpec {
    BoundarySpec {
        top: EdgeCondition::dirichlet(cols, value),
        bottom: EdgeCondition::dirichlet(cols, value),
        left: EdgeCondition::dirichlet(rows, value),
        right: EdgeCondition::dirichlet(rows, value),
        geometry: Geometry::Cartesian {
            dx: 1.0 / (cols - 1) as f64,
            dy: 1.0 / (rows - 1) as f64,
        },
    }
}

/// Assembles `-Δ_h u = f` over the interior nodes (5-point stencil, wall
/// values moved to the right-hand side). Returns the system and the map from
/// unknown index to node index.
pub fn poisson_system(f: &[f64], bc: &BoundarySpec, rows: usize, cols: usize) -> Result<(SparseSystem, Vec<usize>)> {
    bc.validate(rows, cols)?;
    if ![&bc.top, &bc.bottom, &bc.left, &bc.right].iter().all(|e| e.is_dirichlet()) {
        return Err(Error::invalid("solve_poisson_fd", "all edges must be Dirichlet"));
    }
    if f.len() != rows * cols {
        return Err(Error::invalid("solve_poisson_fd", format!("{} source values for {rows}x{cols}", f.len())));
    }
    let (dy, dx) = bc.geometry.spacing(rows, cols);
    let (cx, cy) = (1.0 / (dx * dx), 1.0 / (dy * dy));
    let mut index = vec![usize::MAX; rows * cols];
    let mut nodes = Vec::new();
    for i in 1..rows - 1 {
        for j in 1..cols - 1 {
            index[i * cols + j] = nodes.len();
            nodes.push(i * cols + j);
        }
    }
    let mut mat = Vec::with_capacity(nodes.len());
    let mut rhs = Vec::with_capacity(nodes.len());
    for &p in &nodes {
        let (i, j) = (p / cols, p % cols);
        let mut row = vec![(index[p], 2.0 * cx + 2.0 * cy)];
        let mut b = f[p];
        for (ii, jj, c) in [(i - 1, j, cy), (i + 1, j, cy), (i, j - 1, cx), (i, j + 1, cx)] {
            match index[ii * cols + jj] {
                usize::MAX => b += c * bc.dirichlet_value(ii, jj, rows, cols).expect("wall node"),
                q => row.push((q, -c)),
            }
        }
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

/// Reference solution on the full grid, walls included.
pub fn solve_poisson_fd(f: &[f64], bc: &BoundarySpec, rows: usize, cols: usize) -> Result<Vec<f64>> {
    let (sys, nodes) = poisson_system(f, bc, rows, cols)?;
    let (x, _) = sys.solve(CG_TOL, 50 * rows * cols)?;
    let mut u: Vec<f64> = (0..rows * cols)
        .map(|p| bc.dirichlet_value(p / cols, p % cols, rows, cols).unwrap_or(0.0))
        .collect();
    for (k, &p) in nodes.iter().enumerate() {
        u[p] = x[k];
    }
    Ok(u)
}

/// Sources drawn from the GRF, one seed stream per sample across all
/// splits (train first, then validation, then test).
pub fn gen_poisson_dataset(spec: &PoissonSpec, seed: u64, workers: usize) -> Result<RawSplits> {
    let basis = kl_expansion(&spec.grf)?;
    let (rows, cols) = (spec.grf.rows, spec.grf.cols);
    let bc = unit_square_bc(rows, cols, spec.boundary_value);
    let c = spec.counts;
    let all = par_map(c.train + c.validation + c.test, workers, |g| {
        let f = sample_grf(&basis, &mut stream(seed, "poisson/source", g as u64));
        let u = solve_poisson_fd(&f, &bc, rows, cols)?;
        GridSample::new(
            TensorData::new(vec![1, 1, rows, cols], f)?,
            TensorData::new(vec![1, 1, rows, cols], u)?,
            bc.clone(),
        )
    })?;
    let mut it = all.into_iter();
    Ok(RawSplits {
        kind: PdeKind::Poisson,
        train: it.by_ref().take(c.train).collect(),
        validation: it.by_ref().take(c.validation).collect(),
        test: it.collect(),
    })
}
