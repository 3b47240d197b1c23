//! Elementwise arithmetic and activations.
//!
//! Binary ops accept equal shapes, or a one-element operand which is
//! broadcast against the other. Nothing else broadcasts.

use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

#[derive(Clone, Copy)]
enum Layout {
    Same,
    ScalarLeft,
    ScalarRight,
}

fn layout(op: &'static str, a: &Tensor, b: &Tensor) -> Result<(Layout, Vec<usize>)> {
    if a.shape() == b.shape() {
        Ok((Layout::Same, a.shape().to_vec()))
    } else if b.numel() == 1 {
        Ok((Layout::ScalarRight, a.shape().to_vec()))
    } else if a.numel() == 1 {
        Ok((Layout::ScalarLeft, b.shape().to_vec()))
    } else {
        Err(TensorError::shape(
            op,
            format!("{:?} vs {:?} (only scalar broadcasting)", a.shape(), b.shape()),
        ))
    }
}

type Partial = fn(f64, f64) -> f64;

/// `f(x, y)` with partials `dfx(x, y)` and `dfy(x, y)`.
fn binary(
    op: &'static str,
    a: &Tensor,
    b: &Tensor,
    f: fn(f64, f64) -> f64,
    dfx: Partial,
    dfy: Partial,
) -> Result<Tensor> {
    let (lay, shape) = layout(op, a, b)?;
    let out: Vec<f64> = {
        let (x, y) = (a.data(), b.data());
        match lay {
            Layout::Same => x.iter().zip(y.iter()).map(|(&p, &q)| f(p, q)).collect(),
            Layout::ScalarRight => x.iter().map(|&p| f(p, y[0])).collect(),
            Layout::ScalarLeft => y.iter().map(|&q| f(x[0], q)).collect(),
        }
    };
    Ok(Tensor::from_op(
        out,
        shape,
        op,
        vec![a.clone(), b.clone()],
        move |ctx| {
            let x = ctx.inputs[0].data();
            let y = ctx.inputs[1].data();
            let g = ctx.grad;
            let n = g.len();
            let xv = |i: usize| if matches!(lay, Layout::ScalarLeft) { x[0] } else { x[i] };
            let yv = |i: usize| if matches!(lay, Layout::ScalarRight) { y[0] } else { y[i] };
            let ga = ctx.inputs[0].requires_grad().then(|| {
                let full: Vec<f64> = (0..n).map(|i| g[i] * dfx(xv(i), yv(i))).collect();
                if matches!(lay, Layout::ScalarLeft) {
                    vec![full.iter().sum()]
                } else {
                    full
                }
            });
            let gb = ctx.inputs[1].requires_grad().then(|| {
                let full: Vec<f64> = (0..n).map(|i| g[i] * dfy(xv(i), yv(i))).collect();
                if matches!(lay, Layout::ScalarRight) {
                    vec![full.iter().sum()]
                } else {
                    full
                }
            });
            vec![ga, gb]
        },
    ))
}

fn unary(
    op: &'static str,
    a: &Tensor,
    f: impl Fn(f64) -> f64,
    // derivative from (input, output)
    df: fn(f64, f64) -> f64,
) -> Tensor {
    let out: Vec<f64> = a.data().iter().map(|&v| f(v)).collect();
    Tensor::from_op(out, a.shape().to_vec(), op, vec![a.clone()], move |ctx| {
        let x = ctx.inputs[0].data();
        let g: Vec<f64> = ctx
            .grad
            .iter()
            .zip(x.iter().zip(ctx.output))
            .map(|(&g, (&xi, &yi))| g * df(xi, yi))
            .collect();
        vec![Some(g)]
    })
}

const SQRT_2: f64 = std::f64::consts::SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Exact GELU, `x * Phi(x)`.
pub fn gelu_scalar(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / SQRT_2))
}

fn gelu_grad(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x / SQRT_2));
    let pdf = INV_SQRT_2PI * (-0.5 * x * x).exp();
    cdf + x * pdf
}

impl Tensor {
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        binary("add", self, other, |x, y| x + y, |_, _| 1.0, |_, _| 1.0)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        binary("sub", self, other, |x, y| x - y, |_, _| 1.0, |_, _| -1.0)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        binary("mul", self, other, |x, y| x * y, |_, y| y, |x, _| x)
    }

    /// Elementwise quotient; any zero in the divisor is an error.
    pub fn div(&self, other: &Tensor) -> Result<Tensor> {
        if other.data().iter().any(|&v| v == 0.0) {
            return Err(TensorError::DivisionByZero { op: "div" });
        }
        binary(
            "div",
            self,
            other,
            |x, y| x / y,
            |_, y| 1.0 / y,
            |x, y| -x / (y * y),
        )
    }

    pub fn add_scalar(&self, c: f64) -> Tensor {
        let out = self.data().iter().map(|v| v + c).collect();
        Tensor::from_op(out, self.shape().to_vec(), "add_scalar", vec![self.clone()], |ctx| {
            vec![Some(ctx.grad.to_vec())]
        })
    }

    pub fn mul_scalar(&self, c: f64) -> Tensor {
        let out = self.data().iter().map(|v| v * c).collect();
        Tensor::from_op(out, self.shape().to_vec(), "mul_scalar", vec![self.clone()], move |ctx| {
            vec![Some(ctx.grad.iter().map(|g| g * c).collect())]
        })
    }

    pub fn div_scalar(&self, c: f64) -> Result<Tensor> {
        if c == 0.0 {
            return Err(TensorError::DivisionByZero { op: "div_scalar" });
        }
        Ok(self.mul_scalar(1.0 / c))
    }

    pub fn neg(&self) -> Tensor {
        self.mul_scalar(-1.0)
    }

    pub fn pow2(&self) -> Tensor {
        unary("pow2", self, |x| x * x, |x, _| 2.0 * x)
    }

    /// Absolute value; the subgradient at zero is taken as 0.
    pub fn abs(&self) -> Tensor {
        unary("abs", self, f64::abs, |x, _| {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        })
    }

    pub fn exp(&self) -> Tensor {
        unary("exp", self, f64::exp, |_, y| y)
    }

    pub fn tanh(&self) -> Tensor {
        unary("tanh", self, f64::tanh, |_, y| 1.0 - y * y)
    }

    pub fn sigmoid(&self) -> Tensor {
        unary(
            "sigmoid",
            self,
            |x| 1.0 / (1.0 + (-x).exp()),
            |_, y| y * (1.0 - y),
        )
    }

    pub fn relu(&self) -> Tensor {
        unary("relu", self, |x| x.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    /// GELU with the exact Gaussian CDF.
    pub fn gelu(&self) -> Tensor {
        unary("gelu", self, gelu_scalar, |x, _| gelu_grad(x))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: &[f64]) -> Tensor {
        Tensor::parameter(v.to_vec(), &[v.len()]).unwrap()
    }

    #[test]
    fn relu_values() {
        let y = t(&[-1.0, 2.0]).relu();
        assert_eq!(y.to_vec(), vec![0.0, 2.0]);
    }

    #[test]
    fn gelu_at_zero_is_zero() {
        assert_eq!(t(&[0.0]).gelu().item(), 0.0);
    }

    #[test]
    fn abs_subgradient_at_zero() {
        let x = t(&[0.0, -2.0, 3.0]);
        x.abs().sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![0.0, -1.0, 1.0]);
    }

    #[test]
    fn division_by_zero_reported() {
        let a = t(&[1.0, 2.0]);
        let b = t(&[1.0, 0.0]);
        assert!(matches!(
            a.div(&b),
            Err(TensorError::DivisionByZero { .. })
        ));
        assert!(a.div_scalar(0.0).is_err());
    }

    #[test]
    fn scalar_broadcast_both_sides() {
        let a = t(&[1.0, 2.0, 3.0]);
        let s = Tensor::parameter(vec![2.0], &[1]).unwrap();
        let y = s.mul(&a).unwrap().sum();
        y.backward().unwrap();
        assert_eq!(s.grad().unwrap(), vec![6.0]);
        assert_eq!(a.grad().unwrap(), vec![2.0, 2.0, 2.0]);
        let bad = t(&[1.0, 2.0]);
        assert!(a.add(&bad).is_err());
    }

    #[test]
    fn square_gradient() {
        let x = t(&[3.0]);
        x.pow2().sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![6.0]);
    }
}
