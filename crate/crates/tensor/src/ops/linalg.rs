use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

/// `C = A·B + beta·C` on row-major slices. `a_t`/`b_t` mean the slice holds
/// the transpose of the logical operand.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    c: &mut [f64],
    beta: f64,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: bounds asserted above; strides describe the row-major layouts.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

impl Tensor {
    /// Matrix product of `[m, k]` and `[k, n]`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (sa, sb) = (self.shape(), other.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(TensorError::shape(
                "matmul",
                format!("{sa:?} x {sb:?}"),
            ));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, &self.data(), false, &other.data(), false, &mut out, 0.0);
        Ok(Tensor::from_op(
            out,
            vec![m, n],
            "matmul",
            vec![self.clone(), other.clone()],
            move |ctx| {
                let a = ctx.inputs[0].data();
                let b = ctx.inputs[1].data();
                let ga = ctx.inputs[0].requires_grad().then(|| {
                    let mut g = vec![0.0; m * k];
                    gemm(m, n, k, ctx.grad, false, &b, true, &mut g, 0.0);
                    g
                });
                let gb = ctx.inputs[1].requires_grad().then(|| {
                    let mut g = vec![0.0; k * n];
                    gemm(k, m, n, &a, true, ctx.grad, false, &mut g, 0.0);
                    g
                });
                vec![ga, gb]
            },
        ))
    }
}
