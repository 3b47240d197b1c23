//! Parameter update rules.

use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

/// Bias-corrected Adam moments for a fixed list of parameters.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &[Tensor], lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// Updates every parameter from its accumulated `grad`. Parameters
    /// without a gradient are left untouched, moments included.
    pub fn step(&mut self, params: &[Tensor]) -> Result<()> {
        let grads: Vec<Option<Vec<f64>>> = params.iter().map(|p| p.grad()).collect();
        adam_step(params, &grads, self)
    }
}

/// One Adam step with explicit gradients. `t` advances once per call.
pub fn adam_step(params: &[Tensor], grads: &[Option<Vec<f64>>], state: &mut AdamState) -> Result<()> {
    if params.len() != state.m.len() || grads.len() != params.len() {
        return Err(TensorError::OptimizerState {
            index: params.len().min(state.m.len()),
            detail: format!(
                "{} parameters, {} gradients, state tracks {}",
                params.len(),
                grads.len(),
                state.m.len()
            ),
        });
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if state.m[i].len() != p.numel() {
            return Err(TensorError::OptimizerState {
                index: i,
                detail: format!("moment length {} vs parameter {:?}", state.m[i].len(), p.shape()),
            });
        }
        if let Some(g) = g {
            if g.len() != p.numel() {
                return Err(TensorError::OptimizerState {
                    index: i,
                    detail: format!("gradient length {} vs parameter {:?}", g.len(), p.shape()),
                });
            }
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        let Some(g) = g else { continue };
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        let (b1, b2, lr, eps) = (state.beta1, state.beta2, state.lr, state.eps);
        p.update_data(|d| {
            for k in 0..d.len() {
                m[k] = b1 * m[k] + (1.0 - b1) * g[k];
                v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
                let mhat = m[k] / bc1;
                let vhat = v[k] / bc2;
                d[k] -= lr * mhat / (vhat.sqrt() + eps);
            }
        });
    }
    Ok(())
}

/// Plain gradient step `p -= lr * grad` on parameters that have a gradient.
pub fn sgd_step(params: &[Tensor], lr: f64) {
    for p in params {
        let g = p.grad_ref();
        let Some(g) = g.as_ref() else { continue };
        let g = g.clone();
        p.update_data(|d| d.iter_mut().zip(&g).for_each(|(x, gi)| *x -= lr * gi));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        let p = Tensor::parameter(vec![0.5], &[1]).unwrap();
        let mut st = AdamState::new(&[p.clone()], 1e-3);
        adam_step(&[p.clone()], &[Some(vec![1.0])], &mut st).unwrap();
        // m_hat = 1, v_hat = 1 -> delta = lr / (1 + eps)
        let delta = 0.5 - p.item();
        assert!((delta - 1e-3 / (1.0 + 1e-8)).abs() < 1e-15);
        assert_eq!(st.step_count(), 1);
    }

    #[test]
    fn zero_gradient_leaves_parameter() {
        let p = Tensor::parameter(vec![2.0], &[1]).unwrap();
        let mut st = AdamState::new(&[p.clone()], 1e-3);
        for k in 1..=3 {
            adam_step(&[p.clone()], &[Some(vec![0.0])], &mut st).unwrap();
            assert_eq!(st.step_count(), k);
        }
        assert!((p.item() - 2.0).abs() < 1e-3 * 1e-6);
    }

    #[test]
    fn mismatched_state_rejected() {
        let p = Tensor::parameter(vec![1.0, 2.0], &[2]).unwrap();
        let q = Tensor::parameter(vec![1.0], &[1]).unwrap();
        let mut st = AdamState::new(&[q], 1e-3);
        assert!(adam_step(&[p.clone()], &[Some(vec![1.0, 1.0])], &mut st).is_err());
        let mut st = AdamState::new(&[p.clone()], 1e-3);
        assert!(adam_step(&[p], &[Some(vec![1.0])], &mut st).is_err());
    }

    #[test]
    fn missing_gradient_skips_parameter() {
        let p = Tensor::parameter(vec![1.0], &[1]).unwrap();
        let mut st = AdamState::new(&[p.clone()], 0.1);
        st.step(&[p.clone()]).unwrap();
        assert_eq!(p.item(), 1.0);
    }
}
