//! Fixed derivative kernels.
//!
//! Rows of a field are the `y` axis, columns the `x` axis. Every kernel is
//! applied as a cross-correlation, so a coefficient at offset `(di, dj)`
//! multiplies `u[i + di][j + dj]`.

use std::fmt;
use std::rc::Rc;

use picnn_tensor::{conv2d, GatherEntry, PaddingSpec, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    Sobel3,
    Sobel5,
    Central2,
    Central4,
}

impl KernelFamily {
    pub const ALL: [KernelFamily; 4] = [
        KernelFamily::Sobel3,
        KernelFamily::Sobel5,
        KernelFamily::Central2,
        KernelFamily::Central4,
    ];

    /// Half-width of the second-derivative stencil.
    pub fn second_radius(self) -> usize {
        match self {
            KernelFamily::Central2 => 1,
            KernelFamily::Central4 | KernelFamily::Sobel3 => 2,
            KernelFamily::Sobel5 => 4,
        }
    }

    /// Half-width of the first-derivative stencil.
    pub fn first_radius(self) -> usize {
        match self {
            KernelFamily::Central2 | KernelFamily::Sobel3 => 1,
            KernelFamily::Central4 | KernelFamily::Sobel5 => 2,
        }
    }
}

impl fmt::Display for KernelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            KernelFamily::Sobel3 => "sobel3",
            KernelFamily::Sobel5 => "sobel5",
            KernelFamily::Central2 => "central2",
            KernelFamily::Central4 => "central4",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Derivative {
    Dx,
    Dy,
    Dxx,
    Dyy,
}

impl Derivative {
    fn along_y(self) -> bool {
        matches!(self, Derivative::Dy | Derivative::Dyy)
    }
}

/// An immutable stencil. Coefficients never enter an optimizer; gradients
/// only flow through them to the field.
#[derive(Debug, Clone, PartialEq)]
pub struct StencilKernel {
    family: KernelFamily,
    derivative: Derivative,
    h: f64,
    rows: usize,
    cols: usize,
    coeffs: Vec<f64>,
}

fn outer(col: &[f64], row: &[f64]) -> Vec<f64> {
    col.iter().flat_map(|c| row.iter().map(move |r| c * r)).collect()
}

/// Full 2-D convolution of two kernels, i.e. the kernel of applying `a` then `b`.
fn compose(a: &[f64], (ar, ac): (usize, usize), b: &[f64], (br, bc): (usize, usize)) -> (Vec<f64>, usize, usize) {
    let (r, c) = (ar + br - 1, ac + bc - 1);
    let mut out = vec![0.0; r * c];
    for i in 0..ar {
        for j in 0..ac {
            for k in 0..br {
                for l in 0..bc {
                    out[(i + k) * c + j + l] += a[i * ac + j] * b[k * bc + l];
                }
            }
        }
    }
    (out, r, c)
}

fn transpose(v: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut t = vec![0.0; v.len()];
    for i in 0..rows {
        for j in 0..cols {
            t[j * rows + i] = v[i * cols + j];
        }
    }
    t
}

/// x-direction first derivative for `h = 1`, as (coefficients, rows, cols).
fn first_dx(family: KernelFamily) -> (Vec<f64>, usize, usize) {
    match family {
        KernelFamily::Sobel3 => (
            outer(&[1.0, 2.0, 1.0], &[-1.0, 0.0, 1.0]).iter().map(|v| v / 8.0).collect(),
            3,
            3,
        ),
        KernelFamily::Sobel5 => (
            outer(&[1.0, 4.0, 6.0, 4.0, 1.0], &[-1.0, -2.0, 0.0, 2.0, 1.0])
                .iter()
                .map(|v| v / 128.0)
                .collect(),
            5,
            5,
        ),
        KernelFamily::Central2 => (vec![-0.5, 0.0, 0.5], 1, 3),
        KernelFamily::Central4 => (
            [1.0, -8.0, 0.0, 8.0, -1.0].iter().map(|v| v / 12.0).collect(),
            1,
            5,
        ),
    }
}

fn second_dxx(family: KernelFamily) -> (Vec<f64>, usize, usize) {
    match family {
        KernelFamily::Central2 => (vec![1.0, -2.0, 1.0], 1, 3),
        KernelFamily::Central4 => (
            vec![-1.0 / 12.0, 4.0 / 3.0, -5.0 / 2.0, 4.0 / 3.0, -1.0 / 12.0],
            1,
            5,
        ),
        KernelFamily::Sobel3 | KernelFamily::Sobel5 => {
            let (k, r, c) = first_dx(family);
            compose(&k, (r, c), &k, (r, c))
        }
    }
}

impl StencilKernel {
    pub fn new(family: KernelFamily, derivative: Derivative, h: f64) -> Result<Self> {
        if !(h.is_finite() && h > 0.0) {
            return Err(Error::invalid("stencil", format!("grid spacing must be positive, got {h}")));
        }
        let (base, r, c, scale) = match derivative {
            Derivative::Dx | Derivative::Dy => {
                let (k, r, c) = first_dx(family);
                (k, r, c, 1.0 / h)
            }
            Derivative::Dxx | Derivative::Dyy => {
                let (k, r, c) = second_dxx(family);
                (k, r, c, 1.0 / (h * h))
            }
        };
        let scaled: Vec<f64> = base.iter().map(|v| v * scale).collect();
        let (coeffs, rows, cols) = if derivative.along_y() {
            (transpose(&scaled, r, c), c, r)
        } else {
            (scaled, r, c)
        };
        Ok(Self {
            family,
            derivative,
            h,
            rows,
            cols,
            coeffs,
        })
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    pub fn derivative(&self) -> Derivative {
        self.derivative
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn size(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    /// `(rows / 2, cols / 2)`.
    pub fn radius(&self) -> (usize, usize) {
        (self.rows / 2, self.cols / 2)
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coeffs
    }

    /// Nonzero taps as `(di, dj, c)` offsets from the center.
    pub fn taps(&self) -> Vec<(isize, isize, f64)> {
        let (ry, rx) = self.radius();
        let mut out = Vec::new();
        for i in 0..self.rows {
            for j in 0..self.cols {
                let c = self.coeffs[i * self.cols + j];
                if c != 0.0 {
                    out.push((i as isize - ry as isize, j as isize - rx as isize, c));
                }
            }
        }
        out
    }

    pub fn weight(&self) -> Tensor {
        Tensor::new(self.coeffs.clone(), &[1, 1, self.rows, self.cols]).expect("kernel shape")
    }
}

/// Places `inner` (`[N, 1, H - 2ry, W - 2rx]`) at the interior of an
/// `[N, 1, H, W]` field whose border band is zero.
pub(crate) fn embed(inner: &Tensor, ry: usize, rx: usize) -> Result<Tensor> {
    let &[n, c, ih, iw] = inner.shape() else {
        return Err(Error::invalid("embed", format!("expected 4-D, got {:?}", inner.shape())));
    };
    if ry == 0 && rx == 0 {
        return Ok(inner.clone());
    }
    let (h, w) = (ih + 2 * ry, iw + 2 * rx);
    let mut entries = Vec::with_capacity(n * c * h * w);
    for p in 0..n * c {
        for i in 0..h {
            for j in 0..w {
                let inside = (ry..ry + ih).contains(&i) && (rx..rx + iw).contains(&j);
                entries.push(if inside {
                    GatherEntry::copy((p * ih + i - ry) * iw + j - rx)
                } else {
                    GatherEntry::constant(0.0)
                });
            }
        }
    }
    Ok(inner.gather(&[n, c, h, w], Rc::from(entries))?)
}

/// Valid cross-correlation of a `[N, 1, H, W]` field with `kernel`,
/// re-embedded so the output has the input's shape and zeros where the
/// stencil would leave the field.
pub fn apply_stencil(field: &Tensor, kernel: &StencilKernel) -> Result<Tensor> {
    let &[_, c, h, w] = field.shape() else {
        return Err(Error::invalid("apply_stencil", format!("expected [N,1,H,W], got {:?}", field.shape())));
    };
    let (kr, kc) = kernel.size();
    if c != 1 || h < kr || w < kc {
        return Err(Error::invalid(
            "apply_stencil",
            format!("field {:?} vs {kr}x{kc} kernel", field.shape()),
        ));
    }
    let valid = conv2d(field, &kernel.weight(), None, 1, PaddingSpec::Valid)?;
    let (ry, rx) = kernel.radius();
    embed(&valid, ry, rx)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(h: usize, w: usize, f: impl Fn(f64, f64) -> f64, dx: f64) -> Tensor {
        let mut v = Vec::with_capacity(h * w);
        for i in 0..h {
            for j in 0..w {
                v.push(f(j as f64 * dx, i as f64 * dx));
            }
        }
        Tensor::new(v, &[1, 1, h, w]).unwrap()
    }

    #[test]
    fn central2_second_derivative_of_square() {
        let u = grid(6, 7, |x, _| x * x, 1.0);
        let k = StencilKernel::new(KernelFamily::Central2, Derivative::Dxx, 1.0).unwrap();
        let d = apply_stencil(&u, &k).unwrap().to_vec();
        for i in 0..6 {
            for j in 1..6 {
                assert_eq!(d[i * 7 + j], 2.0);
            }
            assert_eq!(d[i * 7], 0.0);
        }
    }

    #[test]
    fn sobel3_annihilates_constants() {
        let u = Tensor::full(&[2, 1, 5, 5], 3.7);
        for d in [Derivative::Dx, Derivative::Dy, Derivative::Dxx, Derivative::Dyy] {
            let k = StencilKernel::new(KernelFamily::Sobel3, d, 0.3).unwrap();
            assert!(apply_stencil(&u, &k).unwrap().to_vec().iter().all(|v| v.abs() < 1e-12));
        }
    }

    #[test]
    fn central4_on_quartic() {
        let h = 0.5;
        let u = grid(3, 12, |x, _| x.powi(4), h);
        let k = StencilKernel::new(KernelFamily::Central4, Derivative::Dxx, h).unwrap();
        let d = apply_stencil(&u, &k).unwrap().to_vec();
        for j in 2..10 {
            let x = j as f64 * h;
            assert!((d[12 + j] - 12.0 * x * x).abs() < 1e-10, "{} vs {}", d[12 + j], 12.0 * x * x);
        }
    }

    #[test]
    fn composed_sobel_sizes() {
        let k = StencilKernel::new(KernelFamily::Sobel5, Derivative::Dyy, 1.0).unwrap();
        assert_eq!(k.size(), (9, 9));
        assert_eq!(k.radius().0, KernelFamily::Sobel5.second_radius());
        let k = StencilKernel::new(KernelFamily::Central4, Derivative::Dy, 1.0).unwrap();
        assert_eq!(k.size(), (5, 1));
    }

    #[test]
    fn rejects_small_field_and_bad_spacing() {
        let k = StencilKernel::new(KernelFamily::Sobel5, Derivative::Dx, 1.0).unwrap();
        assert!(apply_stencil(&Tensor::zeros(&[1, 1, 4, 9]), &k).is_err());
        assert!(StencilKernel::new(KernelFamily::Sobel5, Derivative::Dx, 0.0).is_err());
    }
}
