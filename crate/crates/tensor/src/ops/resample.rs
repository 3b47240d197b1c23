use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpsampleMode {
    Nearest,
    /// Bilinear with aligned corners: the four corner samples of the output
    /// coincide with those of the input.
    Bilinear,
}

/// Integer-factor upsampling.
pub fn upsample(input: &Tensor, mode: UpsampleMode, scale: usize) -> Result<Tensor> {
    if scale < 1 {
        return Err(TensorError::invalid("upsample", "scale must be >= 1"));
    }
    let &[_, _, h, w] = input.shape() else {
        return Err(TensorError::shape("upsample", format!("input must be 4-D, got {:?}", input.shape())));
    };
    resize(input, mode, h * scale, w * scale)
}

/// Resamples to an explicit spatial size (used to match skip connections
/// whose size is not an exact multiple).
pub fn resize(input: &Tensor, mode: UpsampleMode, out_h: usize, out_w: usize) -> Result<Tensor> {
    let &[n, c, h, w] = input.shape() else {
        return Err(TensorError::shape("resize", format!("input must be 4-D, got {:?}", input.shape())));
    };
    if out_h == 0 || out_w == 0 || h == 0 || w == 0 {
        return Err(TensorError::invalid("resize", "empty spatial size"));
    }
    // (source index, weight) taps per output coordinate along one axis
    let taps = |src: usize, dst: usize| -> Vec<[(usize, f64); 2]> {
        (0..dst)
            .map(|o| match mode {
                UpsampleMode::Nearest => {
                    let s = (o * src / dst).min(src - 1);
                    [(s, 1.0), (s, 0.0)]
                }
                UpsampleMode::Bilinear => {
                    let pos = if dst == 1 {
                        0.0
                    } else {
                        o as f64 * (src - 1) as f64 / (dst - 1) as f64
                    };
                    let i0 = (pos.floor() as usize).min(src - 1);
                    let i1 = (i0 + 1).min(src - 1);
                    let t = pos - i0 as f64;
                    [(i0, 1.0 - t), (i1, t)]
                }
            })
            .collect()
    };
    let ty = taps(h, out_h);
    let tx = taps(w, out_w);
    let planes = n * c;
    let mut out = vec![0.0; planes * out_h * out_w];
    {
        let x = input.data();
        for pl in 0..planes {
            let xin = &x[pl * h * w..(pl + 1) * h * w];
            let o = &mut out[pl * out_h * out_w..(pl + 1) * out_h * out_w];
            for (oy, ry) in ty.iter().enumerate() {
                for (ox, rx) in tx.iter().enumerate() {
                    let mut v = 0.0;
                    for &(sy, wy) in ry {
                        for &(sx, wx) in rx {
                            v += wy * wx * xin[sy * w + sx];
                        }
                    }
                    o[oy * out_w + ox] = v;
                }
            }
        }
    }
    let name = match mode {
        UpsampleMode::Nearest => "upsample_nearest",
        UpsampleMode::Bilinear => "upsample_bilinear",
    };
    Ok(Tensor::from_op(
        out,
        vec![n, c, out_h, out_w],
        name,
        vec![input.clone()],
        move |ctx| {
            let mut g = vec![0.0; planes * h * w];
            for pl in 0..planes {
                let gi = &mut g[pl * h * w..(pl + 1) * h * w];
                let go = &ctx.grad[pl * out_h * out_w..(pl + 1) * out_h * out_w];
                for (oy, ry) in ty.iter().enumerate() {
                    for (ox, rx) in tx.iter().enumerate() {
                        let gv = go[oy * out_w + ox];
                        for &(sy, wy) in ry {
                            for &(sx, wx) in rx {
                                gi[sy * w + sx] += wy * wx * gv;
                            }
                        }
                    }
                }
            }
            vec![Some(g)]
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_replicates_blocks() {
        let x = Tensor::new(vec![1.0, 2.0, 3.0, 4.0], &[1, 1, 2, 2]).unwrap();
        let y = upsample(&x, UpsampleMode::Nearest, 2).unwrap();
        assert_eq!(
            y.to_vec(),
            vec![
                1.0, 1.0, 2.0, 2.0, //
                1.0, 1.0, 2.0, 2.0, //
                3.0, 3.0, 4.0, 4.0, //
                3.0, 3.0, 4.0, 4.0,
            ]
        );
    }

    #[test]
    fn bilinear_aligned_corners_row() {
        let x = Tensor::new(vec![0.0, 1.0], &[1, 1, 1, 2]).unwrap();
        let y = upsample(&x, UpsampleMode::Bilinear, 2).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 4]);
        let expected = [0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0];
        for (row, chunk) in y.to_vec().chunks(4).enumerate() {
            for (a, b) in chunk.iter().zip(expected) {
                assert!((a - b).abs() < 1e-15, "row {row}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn bilinear_constant_field() {
        let x = Tensor::full(&[2, 3, 3, 5], -1.5);
        let y = upsample(&x, UpsampleMode::Bilinear, 3).unwrap();
        assert!(y.to_vec().iter().all(|v| (v + 1.5).abs() < 1e-14));
        assert!(upsample(&x, UpsampleMode::Nearest, 0).is_err());
    }
}
