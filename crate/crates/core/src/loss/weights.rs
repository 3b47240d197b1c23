//! Per-point residual weights.
//!
//! Top-N and pointwise-gradient weights persist across steps and are stored
//! for every training sample; normalize and unitize weights are recomputed
//! from the current residue each step.

use super::genome::WeightOp;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Aggregation {
    Cumulative,
    Direct,
}

/// 0/1 mask of the `n` largest entries among `eligible` points. Ties go to
/// the smaller row-major index.
pub fn topn_mask(residue: &[f64], eligible: Option<&[f64]>, n: usize) -> Result<Vec<f64>> {
    let idx: Vec<usize> = (0..residue.len())
        .filter(|&k| eligible.is_none_or(|m| m[k] != 0.0))
        .collect();
    if n == 0 || n > idx.len() {
        return Err(Error::invalid("top_n", format!("N = {n} with {} eligible points", idx.len())));
    }
    let mut order = idx;
    order.sort_by(|&a, &b| residue[b].total_cmp(&residue[a]).then(a.cmp(&b)));
    let mut mask = vec![0.0; residue.len()];
    for &k in &order[..n] {
        mask[k] = 1.0;
    }
    Ok(mask)
}

/// Adds the top-`n` mask of `residue` into `weights`.
pub fn weight_update_topn(residue: &[f64], eligible: Option<&[f64]>, weights: &mut [f64], n: usize) -> Result<()> {
    let mask = topn_mask(residue, eligible, n)?;
    weights.iter_mut().zip(mask).for_each(|(w, m)| *w += m);
    Ok(())
}

/// `η (r - min) / (max - min)` over eligible points; zeros when the residue
/// is constant there. Ineligible points get 0.
pub fn weight_update_normalize(residue: &[f64], eligible: Option<&[f64]>, eta: f64) -> Vec<f64> {
    let on = |k: usize| eligible.is_none_or(|m| m[k] != 0.0);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (k, &r) in residue.iter().enumerate() {
        if on(k) {
            lo = lo.min(r);
            hi = hi.max(r);
        }
    }
    let span = hi - lo;
    residue
        .iter()
        .enumerate()
        .map(|(k, &r)| if on(k) && span > 0.0 { eta * (r - lo) / span } else { 0.0 })
        .collect()
}

/// Gradient ascent `w += ρ ∂L/∂w`.
pub fn weight_update_pointwise_grad(weights: &mut [f64], grad: &[f64], rho: f64) {
    weights.iter_mut().zip(grad).for_each(|(w, g)| *w += rho * g);
}

/// Weights for every point of every training sample.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightState {
    pub op: WeightOp,
    pub points_per_sample: usize,
    pub weights: Vec<f64>,
}

impl WeightState {
    pub fn new(op: WeightOp, n_samples: usize, points_per_sample: usize) -> Self {
        let init = match op {
            WeightOp::TopN { .. } => 0.0,
            _ => 1.0,
        };
        Self {
            op,
            points_per_sample,
            weights: vec![init; n_samples * points_per_sample],
        }
    }

    pub fn aggregation(&self) -> Aggregation {
        match self.op {
            WeightOp::TopN { .. } | WeightOp::PointwiseGrad { .. } => Aggregation::Cumulative,
            WeightOp::Normalize { .. } | WeightOp::Unitize => Aggregation::Direct,
        }
    }

    pub fn sample(&self, s: usize) -> &[f64] {
        &self.weights[s * self.points_per_sample..(s + 1) * self.points_per_sample]
    }

    pub fn sample_mut(&mut self, s: usize) -> &mut [f64] {
        &mut self.weights[s * self.points_per_sample..(s + 1) * self.points_per_sample]
    }

    /// Top-N count for `eligible` residual points.
    pub fn top_n_count(&self, eligible: usize) -> usize {
        match self.op {
            WeightOp::TopN { n: Some(n) } => n,
            _ => (eligible / 100).max(1),
        }
    }
}
