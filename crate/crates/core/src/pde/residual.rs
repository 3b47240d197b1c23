//! Pointwise PDE residuals built from fixed stencils.
//!
//! Differential operators are assembled into constant sparse matrices that
//! act on a (possibly ghost-padded) field. Rows whose stencil would leave
//! the field are left empty, so the output keeps the input shape with a zero
//! band of the stencil radius.

use std::cell::RefCell;
use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;

use picnn_tensor::{CsrMatrix, GatherEntry, Tensor};
use serde::{Deserialize, Serialize};

use super::boundary::{apply_hard_constraint, batch_specs, pad_ghost, BoundarySpec, ConstraintMode, Geometry, GhostFill};
use super::stencil::{apply_stencil, Derivative, KernelFamily, StencilKernel};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PdeKind {
    /// `Δu = 0` on the annulus.
    Heat,
    /// `Δu + f = 0`, input channel is `f`.
    Poisson,
    /// `-∇·(K∇u) = 0`, input channel is `K`.
    Darcy,
}

impl fmt::Display for PdeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PdeKind::Heat => "heat",
            PdeKind::Poisson => "poisson",
            PdeKind::Darcy => "darcy",
        })
    }
}

fn dims4(op: &'static str, t: &Tensor) -> Result<(usize, usize, usize)> {
    match *t.shape() {
        [n, 1, h, w] => Ok((n, h, w)),
        _ => Err(Error::invalid(op, format!("expected [N,1,H,W], got {:?}", t.shape()))),
    }
}

fn merge_taps(a: &StencilKernel, b: &StencilKernel) -> Vec<(isize, isize, f64)> {
    let mut taps: Vec<(isize, isize, f64)> = Vec::new();
    for (di, dj, c) in a.taps().into_iter().chain(b.taps()) {
        match taps.iter_mut().find(|t| t.0 == di && t.1 == dj) {
            Some(t) => t.2 += c,
            None => taps.push((di, dj, c)),
        }
    }
    taps
}

fn tap_radius(taps: &[(isize, isize, f64)]) -> usize {
    taps.iter().map(|t| t.0.unsigned_abs().max(t.1.unsigned_abs())).max().unwrap_or(0)
}

/// Sparse form of `u_xx + u_yy` (cartesian) or `u_rr + u_r/ρ + u_θθ/ρ²`
/// (annulus, rows are ρ) on an `[n, 1, h, w]` field. `ghost` is the number
/// of padded rows above the first physical row, which fixes ρ per row.
pub fn laplacian_operator(
    (n, h, w): (usize, usize, usize),
    kxx: &StencilKernel,
    kyy: &StencilKernel,
    geometry: &Geometry,
    ghost: usize,
) -> Result<CsrMatrix> {
    if kxx.derivative() != Derivative::Dxx || kyy.derivative() != Derivative::Dyy {
        return Err(Error::invalid("laplacian", "kernels must be d²/dx² and d²/dy²"));
    }
    let (xx, yy) = (kxx.taps(), kyy.taps());
    let dy = match geometry {
        Geometry::PolarAnnulus { .. } => Some(StencilKernel::new(kyy.family(), Derivative::Dy, kyy.h())?.taps()),
        Geometry::Cartesian { .. } => None,
    };
    let r = tap_radius(&xx).max(tap_radius(&yy)).max(dy.as_deref().map_or(0, tap_radius));
    if h <= 2 * r || w <= 2 * r {
        return Err(Error::invalid("laplacian", format!("{h}x{w} field too small for radius {r}")));
    }
    let cart = merge_taps(kxx, kyy);
    let mut rows = Vec::with_capacity(n * h * w);
    for s in 0..n {
        for i in 0..h {
            let row_taps: Vec<(isize, isize, f64)> = match *geometry {
                Geometry::Cartesian { .. } => cart.clone(),
                Geometry::PolarAnnulus { r_inner, .. } => {
                    let rho = r_inner + (i as f64 - ghost as f64) * kyy.h();
                    if rho <= 0.0 {
                        return Err(Error::invalid("laplacian", format!("row {i} maps to radius {rho} <= 0")));
                    }
                    let mut t: Vec<_> = yy.clone();
                    t.extend(dy.as_ref().unwrap().iter().map(|&(a, b, c)| (a, b, c / rho)));
                    t.extend(xx.iter().map(|&(a, b, c)| (a, b, c / (rho * rho))));
                    t
                }
            };
            for j in 0..w {
                if i < r || i >= h - r || j < r || j >= w - r {
                    rows.push(Vec::new());
                    continue;
                }
                rows.push(
                    row_taps
                        .iter()
                        .map(|&(di, dj, c)| {
                            let (ii, jj) = ((i as isize + di) as usize, (j as isize + dj) as usize);
                            ((s * h + ii) * w + jj, c)
                        })
                        .collect(),
                );
            }
        }
    }
    Ok(CsrMatrix::from_rows(n * h * w, &rows)?)
}

/// Laplacian of a `[N, 1, H, W]` field; zero within the stencil radius of
/// the border. `ghost` as in [`laplacian_operator`].
pub fn laplacian(
    field: &Tensor,
    kxx: &StencilKernel,
    kyy: &StencilKernel,
    geometry: &Geometry,
    ghost: usize,
) -> Result<Tensor> {
    let dims = dims4("laplacian", field)?;
    let op = laplacian_operator(dims, kxx, kyy, geometry, ghost)?;
    Ok(field.spmv(Rc::new(op), field.shape())?)
}

/// Sparse form of `-∇·(K∇u)` for cartesian spacing `(dy, dx)`.
///
/// Writing the family's Laplacian stencil as `Σ_o c_o (u_{p+o} - u_p)`, the
/// variable-coefficient operator is `Σ_o c_o K̄_o (u_{p+o} - u_p)` with the
/// edge average `K̄_o = (K_p + K_{p+o}) / 2`. For central2 this is the usual
/// staggered face-flux scheme; `K ≡ 1` recovers the Laplacian stencil.
pub fn darcy_operator(
    k: &[f64],
    (n, h, w): (usize, usize, usize),
    family: KernelFamily,
    dy: f64,
    dx: f64,
) -> Result<CsrMatrix> {
    if k.len() != n * h * w {
        return Err(Error::invalid("darcy_residual", format!("K has {} values for {n}x{h}x{w}", k.len())));
    }
    if let Some(bad) = k.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
        return Err(Error::invalid("darcy_residual", format!("permeability must be positive, found {bad}")));
    }
    let kxx = StencilKernel::new(family, Derivative::Dxx, dx)?;
    let kyy = StencilKernel::new(family, Derivative::Dyy, dy)?;
    let taps: Vec<_> = merge_taps(&kxx, &kyy).into_iter().filter(|t| (t.0, t.1) != (0, 0)).collect();
    let r = tap_radius(&taps);
    if h <= 2 * r || w <= 2 * r {
        return Err(Error::invalid("darcy_residual", format!("{h}x{w} field too small for radius {r}")));
    }
    let mut rows = Vec::with_capacity(n * h * w);
    for s in 0..n {
        for i in 0..h {
            for j in 0..w {
                if i < r || i >= h - r || j < r || j >= w - r {
                    rows.push(Vec::new());
                    continue;
                }
                let p = (s * h + i) * w + j;
                let mut row = Vec::with_capacity(taps.len() + 1);
                let mut center = 0.0;
                for &(di, dj, c) in &taps {
                    let q = (s * h + (i as isize + di) as usize) * w + (j as isize + dj) as usize;
                    let coef = c * 0.5 * (k[p] + k[q]);
                    row.push((q, -coef));
                    center += coef;
                }
                row.push((p, center));
                rows.push(row);
            }
        }
    }
    Ok(CsrMatrix::from_rows(n * h * w, &rows)?)
}

/// `-∇·(K∇u)` with the same layout rules as [`laplacian`].
pub fn darcy_residual(u: &Tensor, k: &Tensor, family: KernelFamily, dy: f64, dx: f64) -> Result<Tensor> {
    let dims = dims4("darcy_residual", u)?;
    if k.shape() != u.shape() {
        return Err(Error::invalid(
            "darcy_residual",
            format!("K {:?} vs u {:?}", k.shape(), u.shape()),
        ));
    }
    let op = darcy_operator(&k.data(), dims, family, dy, dx)?;
    Ok(u.spmv(Rc::new(op), u.shape())?)
}

/// Spatial gradient `(∂r/∂x, ∂r/∂y)` of a residual field.
pub fn residual_gradient(residual: &Tensor, kx: &StencilKernel, ky: &StencilKernel) -> Result<(Tensor, Tensor)> {
    Ok((apply_stencil(residual, kx)?, apply_stencil(residual, ky)?))
}

/// Removes `width` cells from each side of `[N, C, H, W]`.
pub fn crop(t: &Tensor, width: usize) -> Result<Tensor> {
    let &[n, c, h, w] = t.shape() else {
        return Err(Error::invalid("crop", format!("expected 4-D, got {:?}", t.shape())));
    };
    if width == 0 {
        return Ok(t.clone());
    }
    if h <= 2 * width || w <= 2 * width {
        return Err(Error::invalid("crop", format!("cannot crop {width} from {h}x{w}")));
    }
    let (oh, ow) = (h - 2 * width, w - 2 * width);
    let mut entries = Vec::with_capacity(n * c * oh * ow);
    for p in 0..n * c {
        for i in 0..oh {
            for j in 0..ow {
                entries.push(GatherEntry::copy((p * h + i + width) * w + j + width));
            }
        }
    }
    Ok(t.gather(&[n, c, oh, ow], Rc::from(entries))?)
}

/// 0/1 mask over the `H × W` nodes whose residual counts toward the loss.
///
/// Hard and combined modes keep every node except Dirichlet ones. Soft mode
/// also drops nodes whose stencil reaches a non-periodic ghost cell.
pub fn residual_mask(bc: &BoundarySpec, h: usize, w: usize, radius: usize, mode: ConstraintMode) -> Vec<f64> {
    let mut m = vec![0.0; h * w];
    for i in 0..h {
        for j in 0..w {
            let keep = if mode.pads_hard() {
                !bc.is_dirichlet_node(i, j, h, w)
            } else {
                (bc.top.is_periodic() || i >= radius)
                    && (bc.bottom.is_periodic() || i + radius < h)
                    && (bc.left.is_periodic() || j >= radius)
                    && (bc.right.is_periodic() || j + radius < w)
            };
            m[i * w + j] = if keep { 1.0 } else { 0.0 };
        }
    }
    m
}

/// Mirror padding for coefficient fields: even reflection across
/// non-periodic edges, wrap across periodic ones.
fn mirror_pad(data: &[f64], (n, h, w): (usize, usize, usize), width: usize, bc: &BoundarySpec) -> Vec<f64> {
    let map = |pos: isize, len: usize, periodic: bool| -> usize {
        if periodic {
            pos.rem_euclid(len as isize) as usize
        } else if pos < 0 {
            (-pos) as usize
        } else if pos >= len as isize {
            2 * (len - 1) - pos as usize
        } else {
            pos as usize
        }
    };
    let (ph, pw) = (h + 2 * width, w + 2 * width);
    let mut out = Vec::with_capacity(n * ph * pw);
    for s in 0..n {
        for p in 0..ph {
            let i = map(p as isize - width as isize, h, bc.top.is_periodic());
            for q in 0..pw {
                let j = map(q as isize - width as isize, w, bc.left.is_periodic());
                out.push(data[(s * h + i) * w + j]);
            }
        }
    }
    out
}

/// A residual field with its mask.
#[derive(Debug, Clone)]
pub struct Residual {
    /// `[N, 1, H, W]`; entries outside the mask are meaningless.
    pub field: Tensor,
    /// `H × W` zeros and ones, shared by all samples.
    pub mask: Rc<[f64]>,
    /// The network output after hard constraints (equal to the raw output
    /// in soft mode).
    pub constrained: Tensor,
}

type CacheKey = (PdeKind, KernelFamily, usize, usize, usize, u64);

/// Memoizes sparse operators. Heat and Poisson operators depend only on
/// shape; Darcy operators also on the permeability tensor, keyed by its id.
#[derive(Debug, Default)]
pub struct OperatorCache {
    ops: RefCell<HashMap<CacheKey, Rc<CsrMatrix>>>,
}

impl OperatorCache {
    pub fn new() -> Self {
        Self::default()
    }

    fn get_or(&self, key: CacheKey, build: impl FnOnce() -> Result<CsrMatrix>) -> Result<Rc<CsrMatrix>> {
        if let Some(op) = self.ops.borrow().get(&key) {
            return Ok(op.clone());
        }
        let op = Rc::new(build()?);
        let mut ops = self.ops.borrow_mut();
        if ops.len() > 64 {
            ops.clear();
        }
        ops.insert(key, op.clone());
        Ok(op)
    }
}

/// Full residual pipeline for one batch: optional hard constraint, ghost
/// padding of the family's second-derivative radius, the PDE operator, and
/// cropping back to `[N, 1, H, W]`. `input` is the parameter field (`f` or
/// `K`, ignored for heat).
pub fn pde_residual(
    kind: PdeKind,
    u: &Tensor,
    input: &Tensor,
    bcs: &[BoundarySpec],
    family: KernelFamily,
    mode: ConstraintMode,
    cache: Option<&OperatorCache>,
) -> Result<Residual> {
    let (n, h, w) = dims4("pde_residual", u)?;
    let spec = batch_specs("pde_residual", bcs, n, h, w)?;
    let bc0 = spec(0);
    if kind != PdeKind::Heat && input.shape() != u.shape() {
        return Err(Error::invalid(
            "pde_residual",
            format!("input {:?} vs prediction {:?}", input.shape(), u.shape()),
        ));
    }
    let constrained = if mode.pads_hard() {
        apply_hard_constraint(u, bcs)?
    } else {
        u.clone()
    };
    let r = family.second_radius();
    let fill = if mode.pads_hard() { GhostFill::Hard } else { GhostFill::Soft };
    let padded = pad_ghost(&constrained, bcs, r, fill)?;
    let pdims = (n, h + 2 * r, w + 2 * r);
    let (dy, dx) = bc0.geometry.spacing(h, w);
    let local = OperatorCache::new();
    let cache = cache.unwrap_or(&local);
    let op = match kind {
        PdeKind::Heat | PdeKind::Poisson => cache.get_or((kind, family, n, h, w, 0), || {
            let kxx = StencilKernel::new(family, Derivative::Dxx, dx)?;
            let kyy = StencilKernel::new(family, Derivative::Dyy, dy)?;
            laplacian_operator(pdims, &kxx, &kyy, &bc0.geometry, r)
        })?,
        PdeKind::Darcy => {
            if !matches!(bc0.geometry, Geometry::Cartesian { .. }) {
                return Err(Error::invalid("pde_residual", "darcy residual needs cartesian geometry"));
            }
            cache.get_or((kind, family, n, h, w, input.id()), || {
                let kp = mirror_pad(&input.data(), (n, h, w), r, bc0);
                darcy_operator(&kp, pdims, family, dy, dx)
            })?
        }
    };
    let full = padded.spmv(op, padded.shape())?;
    let mut field = crop(&full, r)?;
    if kind == PdeKind::Poisson {
        field = field.add(&input.detach())?;
    }
    let mask: Rc<[f64]> = Rc::from(residual_mask(bc0, h, w, r, mode));
    Ok(Residual {
        field,
        mask,
        constrained,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pde::boundary::EdgeCondition;

    fn sample(h: usize, w: usize, dx: f64, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let v = (0..h * w).map(|k| f((k % w) as f64 * dx, (k / w) as f64 * dx)).collect();
        Tensor::new(v, &[1, 1, h, w]).unwrap()
    }

    fn kernels(family: KernelFamily, h: f64) -> (StencilKernel, StencilKernel) {
        (
            StencilKernel::new(family, Derivative::Dxx, h).unwrap(),
            StencilKernel::new(family, Derivative::Dyy, h).unwrap(),
        )
    }

    #[test]
    fn paraboloid_laplacian_is_four() {
        let u = sample(7, 8, 1.0, |x, y| x * x + y * y);
        let (kx, ky) = kernels(KernelFamily::Central2, 1.0);
        let l = laplacian(&u, &kx, &ky, &Geometry::Cartesian { dx: 1.0, dy: 1.0 }, 0).unwrap().to_vec();
        for i in 1..6 {
            for j in 1..7 {
                assert!((l[i * 8 + j] - 4.0).abs() < 1e-12);
            }
        }
        assert_eq!(l[0], 0.0);
    }

    #[test]
    fn darcy_constant_and_manufactured() {
        let (h, w, dx) = (6, 9, 0.1);
        let k = sample(h, w, dx, |x, _| 1.0 + x);
        let u = sample(h, w, dx, |x, _| x);
        let c = Tensor::full(&[1, 1, h, w], 2.5);
        for fam in KernelFamily::ALL {
            let r = fam.second_radius();
            if h <= 2 * r {
                continue;
            }
            let zero = darcy_residual(&c, &k, fam, dx, dx).unwrap().to_vec();
            assert!(zero.iter().all(|v| v.abs() < 1e-9), "{fam}");
            let res = darcy_residual(&u, &k, fam, dx, dx).unwrap().to_vec();
            for i in r..h - r {
                for j in r..w - r {
                    assert!((res[i * w + j] + 1.0).abs() < 1e-9, "{fam} {}", res[i * w + j]);
                }
            }
        }
    }

    #[test]
    fn darcy_rejects_nonpositive_k() {
        let u = Tensor::zeros(&[1, 1, 4, 4]);
        let mut kv = vec![1.0; 16];
        kv[5] = 0.0;
        let k = Tensor::new(kv, &[1, 1, 4, 4]).unwrap();
        assert!(darcy_residual(&u, &k, KernelFamily::Central2, 1.0, 1.0).is_err());
        assert!(darcy_residual(&u, &Tensor::full(&[1, 1, 4, 5], 1.0), KernelFamily::Central2, 1.0, 1.0).is_err());
    }

    #[test]
    fn soft_mask_excludes_band() {
        let bc = BoundarySpec {
            top: EdgeCondition::dirichlet(6, 1.0),
            bottom: EdgeCondition::dirichlet(6, 0.0),
            left: EdgeCondition::Periodic,
            right: EdgeCondition::Periodic,
            geometry: Geometry::PolarAnnulus { r_inner: 0.5, r_outer: 1.0 },
        };
        let m = residual_mask(&bc, 6, 6, 2, ConstraintMode::Soft);
        let rows: Vec<f64> = (0..6).map(|i| m[i * 6..i * 6 + 6].iter().sum()).collect();
        assert_eq!(rows, vec![0.0, 0.0, 6.0, 6.0, 0.0, 0.0]);
        let m = residual_mask(&bc, 6, 6, 2, ConstraintMode::Hard);
        assert_eq!(m.iter().sum::<f64>(), 24.0);
    }

    #[test]
    fn crop_inverts_padding() {
        let u = sample(4, 5, 1.0, |x, y| x - 2.0 * y);
        let bc = BoundarySpec {
            top: EdgeCondition::dirichlet(5, 0.0),
            bottom: EdgeCondition::dirichlet(5, 0.0),
            left: EdgeCondition::neumann(4, 0.0),
            right: EdgeCondition::neumann(4, 1.0),
            geometry: Geometry::Cartesian { dx: 1.0, dy: 1.0 },
        };
        let p = pad_ghost(&u, &[bc], 2, GhostFill::Hard).unwrap();
        assert_eq!(crop(&p, 2).unwrap().to_vec(), u.to_vec());
    }
}
