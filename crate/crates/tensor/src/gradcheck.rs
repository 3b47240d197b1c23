//! Finite-difference verification of reverse-mode gradients.

use crate::error::Result;
use crate::tensor::{no_grad, zero_grads, Tensor};

#[derive(Debug, Clone)]
pub struct GradcheckReport {
    /// Per input: `max |analytic - numeric| / max(max |numeric|, max |analytic|)`.
    pub max_rel_error: Vec<f64>,
    pub tolerance: f64,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error.iter().all(|&e| e < self.tolerance)
    }

    pub fn worst(&self) -> f64 {
        self.max_rel_error.iter().copied().fold(0.0, f64::max)
    }
}

/// Compares gradients of the scalar `f(inputs)` against central differences
/// with step `h`. Inputs must be leaves that require gradients.
pub fn gradcheck<F>(f: F, inputs: &[Tensor], h: f64, tol: f64) -> Result<GradcheckReport>
where
    F: Fn(&[Tensor]) -> Result<Tensor>,
{
    zero_grads(inputs);
    f(inputs)?.backward()?;
    let analytic: Vec<Vec<f64>> = inputs
        .iter()
        .map(|t| t.grad().unwrap_or_else(|| vec![0.0; t.numel()]))
        .collect();
    zero_grads(inputs);

    let mut max_rel_error = Vec::with_capacity(inputs.len());
    for (t, ana) in inputs.iter().zip(&analytic) {
        let base = t.to_vec();
        let mut numeric = vec![0.0; base.len()];
        for k in 0..base.len() {
            let mut probe = base.clone();
            probe[k] = base[k] + h;
            t.set_data(&probe)?;
            let plus = no_grad(|| f(inputs))?.item();
            probe[k] = base[k] - h;
            t.set_data(&probe)?;
            let minus = no_grad(|| f(inputs))?.item();
            numeric[k] = (plus - minus) / (2.0 * h);
        }
        t.set_data(&base)?;
        let scale = numeric
            .iter()
            .chain(ana)
            .fold(0.0f64, |m, v| m.max(v.abs()))
            .max(1e-300);
        let diff = numeric
            .iter()
            .zip(ana)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        max_rel_error.push(diff / scale);
    }
    Ok(GradcheckReport {
        max_rel_error,
        tolerance: tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_gradient_passes() {
        let x = Tensor::parameter(vec![0.1, -0.4, 2.0, 0.7], &[4]).unwrap();
        let r = gradcheck(|ins| Ok(ins[0].mean()), &[x.clone()], 1e-5, 1e-6).unwrap();
        assert!(r.passed(), "{r:?}");
        x.mean().backward().unwrap();
        assert!(x.grad().unwrap().iter().all(|&g| g == 0.25));
    }
}
