//! Boundary conditions: hard imposition, ghost padding and soft penalties.
//!
//! Edges follow array layout: `top` is row 0, `bottom` row `H-1`, `left`
//! column 0 and `right` column `W-1`. Boundary nodes lie on the grid, so a
//! Dirichlet edge pins the outermost row or column itself.

use std::f64::consts::PI;
use std::fmt;
use std::rc::Rc;

use picnn_tensor::{CsrMatrix, GatherEntry, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintMode {
    Soft,
    Hard,
    Combined,
}

impl ConstraintMode {
    pub const ALL: [ConstraintMode; 3] = [ConstraintMode::Soft, ConstraintMode::Hard, ConstraintMode::Combined];

    pub fn pads_hard(self) -> bool {
        !matches!(self, ConstraintMode::Soft)
    }
}

impl fmt::Display for ConstraintMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ConstraintMode::Soft => "soft",
            ConstraintMode::Hard => "hard",
            ConstraintMode::Combined => "combined",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnaryOp {
    Abs,
    Square,
    Identity,
}

impl UnaryOp {
    pub const ALL: [UnaryOp; 3] = [UnaryOp::Abs, UnaryOp::Square, UnaryOp::Identity];

    pub fn apply(self, t: &Tensor) -> Tensor {
        match self {
            UnaryOp::Abs => t.abs(),
            UnaryOp::Square => t.pow2(),
            UnaryOp::Identity => t.clone(),
        }
    }
}

impl fmt::Display for UnaryOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            UnaryOp::Abs => "abs",
            UnaryOp::Square => "square",
            UnaryOp::Identity => "identity",
        })
    }
}

/// Condition on one edge. Values run along the edge: left to right for
/// top/bottom, top to bottom for left/right. Neumann fluxes are outward
/// normal derivatives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EdgeCondition {
    Dirichlet { values: Vec<f64> },
    Neumann { flux: Vec<f64> },
    Periodic,
}

impl EdgeCondition {
    pub fn dirichlet(len: usize, v: f64) -> Self {
        EdgeCondition::Dirichlet { values: vec![v; len] }
    }

    pub fn neumann(len: usize, g: f64) -> Self {
        EdgeCondition::Neumann { flux: vec![g; len] }
    }

    fn values(&self) -> Option<&[f64]> {
        match self {
            EdgeCondition::Dirichlet { values } => Some(values),
            EdgeCondition::Neumann { flux } => Some(flux),
            EdgeCondition::Periodic => None,
        }
    }

    pub fn is_dirichlet(&self) -> bool {
        matches!(self, EdgeCondition::Dirichlet { .. })
    }

    pub fn is_periodic(&self) -> bool {
        matches!(self, EdgeCondition::Periodic)
    }

    fn same_kind(&self, other: &Self) -> bool {
        std::mem::discriminant(self) == std::mem::discriminant(other)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Geometry {
    Cartesian { dx: f64, dy: f64 },
    /// Rows run from `r_inner` (row 0) to `r_outer` (last row), columns
    /// cover `θ ∈ [0, 2π)` without the duplicate seam column.
    PolarAnnulus { r_inner: f64, r_outer: f64 },
}

impl Geometry {
    /// `(dy, dx)` for a grid with `rows × cols` nodes.
    pub fn spacing(&self, rows: usize, cols: usize) -> (f64, f64) {
        match *self {
            Geometry::Cartesian { dx, dy } => (dy, dx),
            Geometry::PolarAnnulus { r_inner, r_outer } => {
                ((r_outer - r_inner) / (rows.max(2) - 1) as f64, 2.0 * PI / cols as f64)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundarySpec {
    pub top: EdgeCondition,
    pub bottom: EdgeCondition,
    pub left: EdgeCondition,
    pub right: EdgeCondition,
    pub geometry: Geometry,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Edge {
    Top,
    Bottom,
    Left,
    Right,
}

impl BoundarySpec {
    pub fn edge(&self, e: Edge) -> &EdgeCondition {
        match e {
            Edge::Top => &self.top,
            Edge::Bottom => &self.bottom,
            Edge::Left => &self.left,
            Edge::Right => &self.right,
        }
    }

    pub fn validate(&self, rows: usize, cols: usize) -> Result<()> {
        if self.top.is_periodic() != self.bottom.is_periodic() || self.left.is_periodic() != self.right.is_periodic() {
            return Err(Error::Boundary("periodic edges must come in opposing pairs".into()));
        }
        for (e, len) in [(Edge::Top, cols), (Edge::Bottom, cols), (Edge::Left, rows), (Edge::Right, rows)] {
            if let Some(v) = self.edge(e).values() {
                if v.len() != len {
                    return Err(Error::Boundary(format!("{e:?} edge has {} values for length {len}", v.len())));
                }
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(Error::Boundary(format!("{e:?} edge has non-finite values")));
                }
            }
        }
        match self.geometry {
            Geometry::Cartesian { dx, dy } if !(dx > 0.0 && dy > 0.0) => {
                Err(Error::Boundary(format!("nonpositive spacing dx={dx}, dy={dy}")))
            }
            Geometry::PolarAnnulus { r_inner, r_outer } if !(0.0 < r_inner && r_inner < r_outer) => {
                Err(Error::Boundary(format!("need 0 < r_inner < r_outer, got {r_inner}, {r_outer}")))
            }
            Geometry::PolarAnnulus { .. } if !self.left.is_periodic() => {
                Err(Error::Boundary("annulus requires periodic θ (left/right) edges".into()))
            }
            _ => Ok(()),
        }
    }

    /// Every non-periodic edge is Dirichlet.
    pub fn is_fully_dirichlet(&self) -> bool {
        [&self.top, &self.bottom, &self.left, &self.right]
            .iter()
            .all(|e| e.is_dirichlet() || e.is_periodic())
    }

    fn same_kinds(&self, other: &Self) -> bool {
        self.top.same_kind(&other.top)
            && self.bottom.same_kind(&other.bottom)
            && self.left.same_kind(&other.left)
            && self.right.same_kind(&other.right)
            && self.geometry == other.geometry
    }

    /// Whether node `(i, j)` is pinned by a Dirichlet edge.
    pub fn is_dirichlet_node(&self, i: usize, j: usize, rows: usize, cols: usize) -> bool {
        (i == 0 && self.top.is_dirichlet())
            || (i == rows - 1 && self.bottom.is_dirichlet())
            || (j == 0 && self.left.is_dirichlet())
            || (j == cols - 1 && self.right.is_dirichlet())
    }

    /// The Dirichlet value at `(i, j)`. Top/bottom take precedence at corners.
    pub fn dirichlet_value(&self, i: usize, j: usize, rows: usize, cols: usize) -> Option<f64> {
        match (&self.top, &self.bottom, &self.left, &self.right) {
            (EdgeCondition::Dirichlet { values }, _, _, _) if i == 0 => Some(values[j]),
            (_, EdgeCondition::Dirichlet { values }, _, _) if i == rows - 1 => Some(values[j]),
            (_, _, EdgeCondition::Dirichlet { values }, _) if j == 0 => Some(values[i]),
            (_, _, _, EdgeCondition::Dirichlet { values }) if j == cols - 1 => Some(values[i]),
            _ => None,
        }
    }
}

fn field_dims(op: &'static str, field: &Tensor) -> Result<(usize, usize, usize)> {
    match *field.shape() {
        [n, 1, h, w] if h >= 2 && w >= 2 => Ok((n, h, w)),
        _ => Err(Error::invalid(op, format!("expected [N,1,H,W] with H,W >= 2, got {:?}", field.shape()))),
    }
}

/// Checks one spec per sample (or a single spec shared by the batch) and
/// that all samples agree on edge kinds.
pub(crate) fn batch_specs<'a>(
    op: &'static str,
    bcs: &'a [BoundarySpec],
    n: usize,
    rows: usize,
    cols: usize,
) -> Result<impl Fn(usize) -> &'a BoundarySpec> {
    if bcs.is_empty() || (bcs.len() != 1 && bcs.len() != n) {
        return Err(Error::invalid(op, format!("{} boundary specs for batch of {n}", bcs.len())));
    }
    for bc in bcs {
        bc.validate(rows, cols)?;
        if !bc.same_kinds(&bcs[0]) {
            return Err(Error::Boundary("edge kinds differ within a batch".into()));
        }
    }
    Ok(move |s: usize| if bcs.len() == 1 { &bcs[0] } else { &bcs[s] })
}

/// Overwrites Dirichlet boundary nodes with their prescribed values. Other
/// nodes pass through unchanged, so the map is idempotent.
pub fn apply_hard_constraint(field: &Tensor, bcs: &[BoundarySpec]) -> Result<Tensor> {
    let (n, h, w) = field_dims("apply_hard_constraint", field)?;
    let spec = batch_specs("apply_hard_constraint", bcs, n, h, w)?;
    let mut entries = Vec::with_capacity(n * h * w);
    for s in 0..n {
        let bc = spec(s);
        for i in 0..h {
            for j in 0..w {
                entries.push(match bc.dirichlet_value(i, j, h, w) {
                    Some(g) => GatherEntry::constant(g),
                    None => GatherEntry::copy((s * h + i) * w + j),
                });
            }
        }
    }
    Ok(field.gather(field.shape(), Rc::from(entries))?)
}

/// How non-periodic ghost cells are filled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GhostFill {
    /// Dirichlet ghosts by odd reflection about the edge value, Neumann
    /// ghosts so the central difference across the edge equals the flux.
    Hard,
    /// Zeros; the cells they touch are masked out of the residual.
    Soft,
}

/// How one padded coordinate maps back onto the field along an axis.
struct AxisRule {
    src: Option<usize>,
    scale: f64,
    /// `(take values from the low edge?, multiplier on the edge value)`.
    offset: Option<(bool, f64)>,
}

fn axis_rule(
    pos: isize,
    n: usize,
    lo: &EdgeCondition,
    hi: &EdgeCondition,
    h: f64,
    fill: GhostFill,
) -> Result<AxisRule> {
    let inside = |i: usize| AxisRule {
        src: Some(i),
        scale: 1.0,
        offset: None,
    };
    if (0..n as isize).contains(&pos) {
        return Ok(inside(pos as usize));
    }
    let (low, k) = if pos < 0 {
        (true, (-pos) as usize)
    } else {
        (false, pos as usize - (n - 1))
    };
    if k >= n {
        return Err(Error::invalid("pad_ghost", format!("ghost width {k} exceeds axis length {n}")));
    }
    let cond = if low { lo } else { hi };
    let mirror = if low { k } else { n - 1 - k };
    Ok(match (cond, fill) {
        (EdgeCondition::Periodic, _) => inside(pos.rem_euclid(n as isize) as usize),
        (_, GhostFill::Soft) => AxisRule {
            src: None,
            scale: 0.0,
            offset: None,
        },
        (EdgeCondition::Dirichlet { .. }, GhostFill::Hard) => AxisRule {
            src: Some(mirror),
            scale: -1.0,
            offset: Some((low, 2.0)),
        },
        (EdgeCondition::Neumann { .. }, GhostFill::Hard) => AxisRule {
            src: Some(mirror),
            scale: 1.0,
            offset: Some((low, 2.0 * k as f64 * h)),
        },
    })
}

/// Nearest field index along an axis for an edge-value lookup.
fn along(pos: isize, n: usize, periodic: bool) -> usize {
    if periodic {
        pos.rem_euclid(n as isize) as usize
    } else {
        pos.clamp(0, n as isize - 1) as usize
    }
}

/// Surrounds the field with `width` ghost cells on every side, giving
/// `[N, 1, H + 2·width, W + 2·width]`. Periodic edges always wrap. Corner
/// ghosts are the row rule applied to column-padded values.
pub fn pad_ghost(field: &Tensor, bcs: &[BoundarySpec], width: usize, fill: GhostFill) -> Result<Tensor> {
    let (n, h, w) = field_dims("pad_ghost", field)?;
    let spec = batch_specs("pad_ghost", bcs, n, h, w)?;
    if width == 0 {
        return Ok(field.clone());
    }
    let (ph, pw) = (h + 2 * width, w + 2 * width);
    let mut entries = Vec::with_capacity(n * ph * pw);
    for s in 0..n {
        let bc = spec(s);
        let (dy, dx) = bc.geometry.spacing(h, w);
        let edge_val = |cond: &EdgeCondition, idx: usize| cond.values().map_or(0.0, |v| v[idx]);
        let col_rules = (0..pw)
            .map(|q| axis_rule(q as isize - width as isize, w, &bc.left, &bc.right, dx, fill))
            .collect::<Result<Vec<_>>>()?;
        for p in 0..ph {
            let pi = p as isize - width as isize;
            let row = axis_rule(pi, h, &bc.top, &bc.bottom, dy, fill)?;
            for (q, col) in col_rules.iter().enumerate() {
                let qj = q as isize - width as isize;
                let row_off = row.offset.map_or(0.0, |(low, m)| {
                    let j = along(qj, w, bc.left.is_periodic());
                    m * edge_val(if low { &bc.top } else { &bc.bottom }, j)
                });
                let entry = match row.src {
                    None => GatherEntry::constant(row_off),
                    Some(ri) => {
                        let col_off = col.offset.map_or(0.0, |(low, m)| {
                            m * edge_val(if low { &bc.left } else { &bc.right }, ri)
                        });
                        match col.src {
                            None => GatherEntry::constant(row.scale * col_off + row_off),
                            Some(cj) => GatherEntry::affine(
                                (s * h + ri) * w + cj,
                                row.scale * col.scale,
                                row.scale * col_off + row_off,
                            ),
                        }
                    }
                };
                entries.push(entry);
            }
        }
    }
    Ok(field.gather(&[n, 1, ph, pw], Rc::from(entries))?)
}

/// Mean of `unary(B[u] - g)` over all boundary points of the batch.
/// Dirichlet mismatch is `u - g`; Neumann uses the one-sided outward
/// difference `(u_edge - u_inner) / h - g`. Each edge lists all of its nodes,
/// so a corner shared by two non-periodic edges appears twice. Periodic edges
/// contribute nothing.
pub fn boundary_penalty(pred: &Tensor, bcs: &[BoundarySpec], unary: UnaryOp) -> Result<Tensor> {
    let (n, h, w) = field_dims("boundary_penalty", pred)?;
    let spec = batch_specs("boundary_penalty", bcs, n, h, w)?;
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut target = Vec::new();
    for s in 0..n {
        let bc = spec(s);
        let (dy, dx) = bc.geometry.spacing(h, w);
        let at = |i: usize, j: usize| (s * h + i) * w + j;
        let edges: [(Edge, usize, f64); 4] = [(Edge::Top, w, dy), (Edge::Bottom, w, dy), (Edge::Left, h, dx), (Edge::Right, h, dx)];
        for (e, len, step) in edges {
            let node = |t: usize, depth: usize| match e {
                Edge::Top => at(depth, t),
                Edge::Bottom => at(h - 1 - depth, t),
                Edge::Left => at(t, depth),
                Edge::Right => at(t, w - 1 - depth),
            };
            match bc.edge(e) {
                EdgeCondition::Periodic => {}
                EdgeCondition::Dirichlet { values } => {
                    for t in 0..len {
                        rows.push(vec![(node(t, 0), 1.0)]);
                        target.push(values[t]);
                    }
                }
                EdgeCondition::Neumann { flux } => {
                    for t in 0..len {
                        rows.push(vec![(node(t, 0), 1.0 / step), (node(t, 1), -1.0 / step)]);
                        target.push(flux[t]);
                    }
                }
            }
        }
    }
    if rows.is_empty() {
        return Ok(Tensor::scalar(0.0));
    }
    let m = rows.len();
    let a = CsrMatrix::from_rows(n * h * w, &rows)?;
    let mismatch = pred.spmv(Rc::new(a), &[m])?.sub(&Tensor::new(target, &[m])?)?;
    Ok(unary.apply(&mismatch).mean())
}
