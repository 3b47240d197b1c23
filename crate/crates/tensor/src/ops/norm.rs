use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

/// Group normalization over `[N, C, H, W]` with per-channel affine
/// `gamma`, `beta` (both `[C]`). Variance is the biased estimate.
pub fn group_norm(input: &Tensor, groups: usize, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
    const OP: &str = "group_norm";
    let &[n, c, h, w] = input.shape() else {
        return Err(TensorError::shape(OP, format!("input must be 4-D, got {:?}", input.shape())));
    };
    if groups == 0 || c % groups != 0 {
        return Err(TensorError::invalid(OP, format!("{c} channels not divisible into {groups} groups")));
    }
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(TensorError::shape(
            OP,
            format!("gamma {:?} / beta {:?}, expected [{c}]", gamma.shape(), beta.shape()),
        ));
    }
    let cg = c / groups;
    let hw = h * w;
    let glen = cg * hw;
    let mut xhat = vec![0.0; n * c * hw];
    let mut inv_std = vec![0.0; n * groups];
    let mut out = vec![0.0; n * c * hw];
    {
        let x = input.data();
        let gm = gamma.data();
        let bt = beta.data();
        for s in 0..n {
            for g in 0..groups {
                let base = (s * c + g * cg) * hw;
                let seg = &x[base..base + glen];
                let mean = seg.iter().sum::<f64>() / glen as f64;
                let var = seg.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / glen as f64;
                let is = 1.0 / (var + eps).sqrt();
                inv_std[s * groups + g] = is;
                for (k, &v) in seg.iter().enumerate() {
                    let ch = g * cg + k / hw;
                    let xh = (v - mean) * is;
                    xhat[base + k] = xh;
                    out[base + k] = gm[ch] * xh + bt[ch];
                }
            }
        }
    }
    Ok(Tensor::from_op(
        out,
        vec![n, c, h, w],
        OP,
        vec![input.clone(), gamma.clone(), beta.clone()],
        move |ctx| {
            let gm = ctx.inputs[1].data();
            let go = ctx.grad;
            let mut gx = vec![0.0; n * c * hw];
            let mut ggamma = vec![0.0; c];
            let mut gbeta = vec![0.0; c];
            for s in 0..n {
                for g in 0..groups {
                    let base = (s * c + g * cg) * hw;
                    let mut mean_d = 0.0;
                    let mut mean_dx = 0.0;
                    for k in 0..glen {
                        let ch = g * cg + k / hw;
                        let d = go[base + k] * gm[ch];
                        mean_d += d;
                        mean_dx += d * xhat[base + k];
                        ggamma[ch] += go[base + k] * xhat[base + k];
                        gbeta[ch] += go[base + k];
                    }
                    mean_d /= glen as f64;
                    mean_dx /= glen as f64;
                    let is = inv_std[s * groups + g];
                    for k in 0..glen {
                        let ch = g * cg + k / hw;
                        let d = go[base + k] * gm[ch];
                        gx[base + k] = is * (d - mean_d - xhat[base + k] * mean_dx);
                    }
                }
            }
            vec![
                ctx.inputs[0].requires_grad().then_some(gx),
                ctx.inputs[1].requires_grad().then_some(ggamma),
                ctx.inputs[2].requires_grad().then_some(gbeta),
            ]
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standardizes_each_group() {
        let data: Vec<f64> = (0..2 * 4 * 9).map(|v| ((v * 37) % 11) as f64 * 0.3 - 1.0).collect();
        let x = Tensor::new(data, &[2, 4, 3, 3]).unwrap();
        let y = group_norm(&x, 2, &Tensor::full(&[4], 1.0), &Tensor::zeros(&[4]), 1e-5).unwrap();
        for seg in y.to_vec().chunks(18) {
            let mean = seg.iter().sum::<f64>() / 18.0;
            let var = seg.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 18.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn constant_input_maps_to_zero() {
        let x = Tensor::full(&[1, 4, 2, 2], 7.0);
        let y = group_norm(&x, 4, &Tensor::full(&[4], 1.0), &Tensor::zeros(&[4]), 1e-5).unwrap();
        assert!(y.to_vec().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn indivisible_channels() {
        let x = Tensor::zeros(&[1, 6, 2, 2]);
        assert!(group_norm(&x, 4, &Tensor::zeros(&[6]), &Tensor::zeros(&[6]), 1e-5).is_err());
    }
}
