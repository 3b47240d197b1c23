//! Executable losses built from a [`LossGenome`].

use picnn_tensor::Tensor;

use super::genome::{LossGenome, WeightOp};
use super::weights::{weight_update_normalize, weight_update_pointwise_grad, weight_update_topn, WeightState};
use crate::error::{Error, Result};
use crate::pde::residual::OperatorCache;
use crate::pde::{
    apply_hard_constraint, boundary_penalty, pde_residual, residual_gradient, BoundarySpec, ConstraintMode,
    Derivative, PdeKind, StencilKernel, UnaryOp,
};

/// One training batch as seen by the loss.
#[derive(Debug, Clone, Copy)]
pub struct LossBatch<'a> {
    /// Raw network output `[N, 1, H, W]`.
    pub pred: &'a Tensor,
    /// Parameter field `[N, 1, H, W]` (source or permeability; unused for heat).
    pub input: &'a Tensor,
    pub bcs: &'a [BoundarySpec],
    /// Training-set index of each batch entry, for persistent weights.
    pub samples: &'a [usize],
}

#[derive(Debug, Clone)]
pub struct LossParts {
    pub total: Tensor,
    pub residual: Tensor,
    pub boundary: Option<Tensor>,
    pub gradient: Option<Tensor>,
    /// Output after hard constraints.
    pub constrained: Tensor,
    weight_leaf: Option<Tensor>,
}

fn repeat_mask(mask: &[f64], n: usize, h: usize, w: usize) -> Result<Tensor> {
    let data: Vec<f64> = (0..n).flat_map(|_| mask.iter().copied()).collect();
    Ok(Tensor::new(data, &[n, 1, h, w])?)
}

fn masked_mean(t: &Tensor, mask: &Tensor, count: f64) -> Result<Tensor> {
    if count == 0.0 {
        return Ok(Tensor::scalar(0.0));
    }
    Ok(t.mul(mask)?.sum().div_scalar(count)?)
}

/// Nodes whose every stencil tap lands inside the array on a masked node.
fn erode(mask: &[f64], h: usize, w: usize, taps: &[(isize, isize, f64)]) -> Vec<f64> {
    let mut out = vec![0.0; h * w];
    for i in 0..h {
        for j in 0..w {
            let ok = mask[i * w + j] != 0.0
                && taps.iter().all(|&(di, dj, _)| {
                    let (ii, jj) = (i as isize + di, j as isize + dj);
                    (0..h as isize).contains(&ii) && (0..w as isize).contains(&jj) && mask[ii as usize * w + jj as usize] != 0.0
                });
            out[i * w + j] = if ok { 1.0 } else { 0.0 };
        }
    }
    out
}

/// `λ_g Σ_i mean(unary(∂r/∂x_i))`, each mean taken over the nodes of `mask`
/// whose derivative stencil stays on masked nodes.
pub fn gradient_enhanced_terms(
    residual: &Tensor,
    mask: &[f64],
    kx: &StencilKernel,
    ky: &StencilKernel,
    unary: UnaryOp,
    lambda_g: f64,
) -> Result<Tensor> {
    let &[n, 1, h, w] = residual.shape() else {
        return Err(Error::invalid("gradient_enhanced_terms", format!("residual shape {:?}", residual.shape())));
    };
    if mask.len() != h * w {
        return Err(Error::invalid("gradient_enhanced_terms", "mask size"));
    }
    let (gx, gy) = residual_gradient(residual, kx, ky)?;
    let mut total = Tensor::scalar(0.0);
    for (g, k) in [(gx, kx), (gy, ky)] {
        let m = erode(mask, h, w, &k.taps());
        let count = m.iter().sum::<f64>() * n as f64;
        let mt = repeat_mask(&m, n, h, w)?;
        total = total.add(&masked_mean(&unary.apply(&g), &mt, count)?)?;
    }
    Ok(total.mul_scalar(lambda_g))
}

/// A loss function for one PDE kind. Holds a cache of stencil operators.
#[derive(Debug)]
pub struct LossEvaluator {
    genome: LossGenome,
    kind: PdeKind,
    cache: OperatorCache,
}

impl LossEvaluator {
    pub fn new(genome: LossGenome, kind: PdeKind) -> Result<Self> {
        genome.validate()?;
        Ok(Self {
            genome,
            kind,
            cache: OperatorCache::new(),
        })
    }

    pub fn genome(&self) -> &LossGenome {
        &self.genome
    }

    pub fn kind(&self) -> PdeKind {
        self.kind
    }

    /// The prediction used for metrics: hard constraints applied when the
    /// genome pads hard, the raw output otherwise.
    pub fn constrain(&self, raw: &Tensor, bcs: &[BoundarySpec]) -> Result<Tensor> {
        if self.genome.constraint.pads_hard() {
            apply_hard_constraint(raw, bcs)
        } else {
            Ok(raw.clone())
        }
    }

    /// Builds the scalar loss. Top-N weights are accumulated before they are
    /// used, so the first step already sees a nonzero residual term.
    pub fn evaluate(&self, batch: LossBatch<'_>, state: &mut WeightState) -> Result<LossParts> {
        let g = &self.genome;
        let &[n, 1, h, w] = batch.pred.shape() else {
            return Err(Error::invalid("loss", format!("prediction shape {:?}", batch.pred.shape())));
        };
        if batch.samples.len() != n || state.points_per_sample != h * w {
            return Err(Error::invalid("loss", "batch indices or weight state do not match the batch"));
        }
        let res = pde_residual(
            self.kind,
            batch.pred,
            batch.input,
            batch.bcs,
            g.kernel,
            g.constraint,
            Some(&self.cache),
        )?;
        let mask: &[f64] = &res.mask;
        let count = mask.iter().sum::<f64>() * n as f64;
        let mask_t = repeat_mask(mask, n, h, w)?;
        let un = g.unary.apply(&res.field);

        let residue: Vec<f64> = res.field.data().iter().map(|v| v.abs()).collect();
        let hw = h * w;
        let mut weight_leaf = None;
        let weights: Option<Tensor> = match g.weight_op {
            WeightOp::Unitize => None,
            WeightOp::TopN { .. } => {
                let eligible = mask.iter().filter(|&&m| m != 0.0).count();
                let k = state.top_n_count(eligible);
                let mut data = Vec::with_capacity(n * hw);
                for (b, &s) in batch.samples.iter().enumerate() {
                    weight_update_topn(&residue[b * hw..(b + 1) * hw], Some(mask), state.sample_mut(s), k)?;
                    data.extend_from_slice(state.sample(s));
                }
                Some(Tensor::new(data, &[n, 1, h, w])?)
            }
            WeightOp::Normalize { eta } => {
                let data: Vec<f64> = (0..n)
                    .flat_map(|b| weight_update_normalize(&residue[b * hw..(b + 1) * hw], Some(mask), eta))
                    .collect();
                Some(Tensor::new(data, &[n, 1, h, w])?)
            }
            WeightOp::PointwiseGrad { .. } => {
                let data: Vec<f64> = batch.samples.iter().flat_map(|&s| state.sample(s).to_vec()).collect();
                let leaf = Tensor::parameter(data, &[n, 1, h, w])?;
                weight_leaf = Some(leaf.clone());
                Some(leaf)
            }
        };
        let weights = match (weights, g.add_ones) {
            (None, false) => None,
            (None, true) => Some(Tensor::full(&[n, 1, h, w], 2.0)),
            (Some(t), true) => Some(t.add_scalar(1.0)),
            (Some(t), false) => Some(t),
        };
        let weighted = match &weights {
            Some(wt) => un.mul(wt)?,
            None => un,
        };
        let residual = masked_mean(&weighted, &mask_t, count)?.mul_scalar(g.lambda_r);
        let mut total = residual.clone();

        let gradient = if g.gradient_enhance {
            let (dy, dx) = batch.bcs[0].geometry.spacing(h, w);
            let kx = StencilKernel::new(g.kernel, Derivative::Dx, dx)?;
            let ky = StencilKernel::new(g.kernel, Derivative::Dy, dy)?;
            let t = gradient_enhanced_terms(&res.field, mask, &kx, &ky, g.unary, g.lambda_g)?;
            total = total.add(&t)?;
            Some(t)
        } else {
            None
        };

        let boundary = if g.boundary_loss {
            // hard mode measures the padded output, combined the raw one
            let target = match g.constraint {
                ConstraintMode::Hard => &res.constrained,
                _ => batch.pred,
            };
            let t = boundary_penalty(target, batch.bcs, g.unary)?.mul_scalar(g.lambda_b);
            if g.constraint == ConstraintMode::Hard && batch.bcs.iter().all(|b| b.is_fully_dirichlet()) {
                debug_assert_eq!(t.item(), 0.0, "hard Dirichlet boundary penalty must vanish");
            }
            total = total.add(&t)?;
            Some(t)
        } else {
            None
        };

        Ok(LossParts {
            total,
            residual,
            boundary,
            gradient,
            constrained: res.constrained,
            weight_leaf,
        })
    }

    /// Post-backward bookkeeping: gradient ascent on trainable weights.
    pub fn after_backward(&self, parts: &LossParts, samples: &[usize], state: &mut WeightState) -> Result<()> {
        let (WeightOp::PointwiseGrad { rho }, Some(leaf)) = (self.genome.weight_op, &parts.weight_leaf) else {
            return Ok(());
        };
        let Some(grad) = leaf.grad() else { return Ok(()) };
        let hw = state.points_per_sample;
        for (b, &s) in samples.iter().enumerate() {
            weight_update_pointwise_grad(state.sample_mut(s), &grad[b * hw..(b + 1) * hw], rho);
        }
        Ok(())
    }
}
