//! Expected-improvement suggestions over an enumerated candidate set.

use std::collections::HashSet;

use rand::seq::index::sample;
use rand::Rng;

use super::gp::GpSurrogate;
use crate::error::{Error, Result};

/// Random trials before the surrogate takes over.
pub const DEFAULT_INIT_TRIALS: usize = 8;

fn norm_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

fn norm_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Expected improvement below `best` for a minimization problem.
pub fn expected_improvement(mu: f64, sigma: f64, best: f64) -> f64 {
    let gap = best - mu;
    if sigma <= 0.0 {
        return gap.max(0.0);
    }
    let z = gap / sigma;
    (gap * norm_cdf(z) + sigma * norm_pdf(z)).max(0.0)
}

/// The surrogate is fitted to `ln(y)`; failed runs are entered with the worst
/// finite value seen.
fn targets(observed: &[(usize, f64)]) -> Vec<f64> {
    let worst = observed
        .iter()
        .map(|o| o.1)
        .filter(|v| v.is_finite())
        .fold(f64::NAN, f64::max);
    let worst = if worst.is_nan() { 1.0 } else { worst };
    observed
        .iter()
        .map(|&(_, v)| if v.is_finite() { v } else { worst }.max(1e-300).ln())
        .collect()
}

fn random_pick(free: &[usize], q: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut idx: Vec<usize> = sample(rng, free.len(), q.min(free.len())).into_iter().collect();
    idx.sort_unstable();
    idx.into_iter().map(|k| free[k]).collect()
}

/// Picks up to `q` candidate indices that are neither observed nor in
/// `exclude`. The first `n_init` trials are uniform random; afterwards each
/// pick maximizes expected improvement, and later picks in the batch treat
/// earlier ones as observed at their posterior mean.
pub fn bo_suggest(
    features: &[Vec<f64>],
    observed: &[(usize, f64)],
    exclude: &HashSet<usize>,
    q: usize,
    n_init: usize,
    rng: &mut impl Rng,
) -> Result<Vec<usize>> {
    if observed.iter().any(|o| o.0 >= features.len()) {
        return Err(Error::Search("observed index outside the candidate set".into()));
    }
    let seen: HashSet<usize> = observed.iter().map(|o| o.0).chain(exclude.iter().copied()).collect();
    let mut free: Vec<usize> = (0..features.len()).filter(|i| !seen.contains(i)).collect();
    if free.is_empty() || q == 0 {
        return Ok(Vec::new());
    }
    let n_random = n_init.saturating_sub(observed.len() + exclude.len()).min(q);
    let mut picks = random_pick(&free, n_random, rng);
    free.retain(|i| !picks.contains(i));
    if observed.is_empty() {
        let extra = random_pick(&free, q - picks.len(), rng);
        picks.extend(extra);
        return Ok(picks);
    }
    let mut x: Vec<Vec<f64>> = observed.iter().map(|o| features[o.0].clone()).collect();
    let mut y = targets(observed);
    while picks.len() < q && !free.is_empty() {
        let gp = match GpSurrogate::fit(&x, &y) {
            Ok(gp) => gp,
            Err(e) => {
                log::warn!("surrogate fit failed ({e}); falling back to random suggestions");
                let extra = random_pick(&free, q - picks.len(), rng);
                picks.extend(extra);
                break;
            }
        };
        let best = y.iter().copied().fold(f64::INFINITY, f64::min);
        let cand: Vec<Vec<f64>> = free.iter().map(|&i| features[i].clone()).collect();
        let post = gp.predict_many(&cand);
        let mut arg = 0;
        let mut top = f64::NEG_INFINITY;
        for (k, &(mu, sd)) in post.iter().enumerate() {
            let ei = expected_improvement(mu, sd, best);
            // ties go to the lower posterior mean, then the lower index
            if ei > top || (ei == top && mu < post[arg].0) {
                top = ei;
                arg = k;
            }
        }
        let chosen = free.remove(arg);
        x.push(features[chosen].clone());
        y.push(post[arg].0);
        picks.push(chosen);
    }
    Ok(picks)
}
