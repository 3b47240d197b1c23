use crate::error::{Result, TensorError};
use crate::ops::conv::PaddingSpec;
use crate::tensor::Tensor;

struct Window {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    size: usize,
    stride: usize,
    ph: usize,
    pw: usize,
    ho: usize,
    wo: usize,
}

impl Window {
    fn new(op: &'static str, t: &Tensor, size: usize, stride: usize, padding: PaddingSpec) -> Result<Self> {
        let &[n, c, h, w] = t.shape() else {
            return Err(TensorError::shape(op, format!("input must be 4-D, got {:?}", t.shape())));
        };
        if size == 0 || stride == 0 {
            return Err(TensorError::invalid(op, "size and stride must be >= 1"));
        }
        let (ph, pw) = padding.resolve(size, size);
        if ph >= size || pw >= size {
            return Err(TensorError::invalid(op, "padding must be smaller than the window"));
        }
        if h + 2 * ph < size || w + 2 * pw < size {
            return Err(TensorError::shape(
                op,
                format!("window {size} larger than padded input {}x{}", h + 2 * ph, w + 2 * pw),
            ));
        }
        Ok(Self {
            n,
            c,
            h,
            w,
            size,
            stride,
            ph,
            pw,
            ho: (h + 2 * ph - size) / stride + 1,
            wo: (w + 2 * pw - size) / stride + 1,
        })
    }

    /// Clipped input ranges covered by an output cell.
    fn ranges(&self, oy: usize, ox: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let y0 = (oy * self.stride) as isize - self.ph as isize;
        let x0 = (ox * self.stride) as isize - self.pw as isize;
        let ys = y0.max(0) as usize..((y0 + self.size as isize) as usize).min(self.h);
        let xs = x0.max(0) as usize..((x0 + self.size as isize) as usize).min(self.w);
        (ys, xs)
    }

    fn out_shape(&self) -> Vec<usize> {
        vec![self.n, self.c, self.ho, self.wo]
    }
}

/// Window maximum. Padded cells never win; ties go to the first element
/// in row-major order.
pub fn maxpool2d(input: &Tensor, size: usize, stride: usize, padding: PaddingSpec) -> Result<Tensor> {
    let win = Window::new("maxpool2d", input, size, stride, padding)?;
    let planes = win.n * win.c;
    let mut out = Vec::with_capacity(planes * win.ho * win.wo);
    let mut argmax = Vec::with_capacity(out.capacity());
    {
        let x = input.data();
        for pl in 0..planes {
            let base = pl * win.h * win.w;
            for oy in 0..win.ho {
                for ox in 0..win.wo {
                    let (ys, xs) = win.ranges(oy, ox);
                    let mut best = usize::MAX;
                    let mut bv = f64::NEG_INFINITY;
                    for y in ys {
                        for xx in xs.clone() {
                            let i = base + y * win.w + xx;
                            if best == usize::MAX || x[i] > bv {
                                best = i;
                                bv = x[i];
                            }
                        }
                    }
                    out.push(bv);
                    argmax.push(best);
                }
            }
        }
    }
    let len = input.numel();
    Ok(Tensor::from_op(out, win.out_shape(), "maxpool2d", vec![input.clone()], move |ctx| {
        let mut g = vec![0.0; len];
        for (&i, &go) in argmax.iter().zip(ctx.grad) {
            g[i] += go;
        }
        vec![Some(g)]
    }))
}

/// Window mean over the cells that fall inside the input (padding is not
/// counted in the divisor).
pub fn avgpool2d(input: &Tensor, size: usize, stride: usize, padding: PaddingSpec) -> Result<Tensor> {
    let win = Window::new("avgpool2d", input, size, stride, padding)?;
    let planes = win.n * win.c;
    let mut out = Vec::with_capacity(planes * win.ho * win.wo);
    {
        let x = input.data();
        for pl in 0..planes {
            let base = pl * win.h * win.w;
            for oy in 0..win.ho {
                for ox in 0..win.wo {
                    let (ys, xs) = win.ranges(oy, ox);
                    let count = ys.len() * xs.len();
                    let mut s = 0.0;
                    for y in ys {
                        for xx in xs.clone() {
                            s += x[base + y * win.w + xx];
                        }
                    }
                    out.push(s / count as f64);
                }
            }
        }
    }
    let len = input.numel();
    Ok(Tensor::from_op(out, win.out_shape(), "avgpool2d", vec![input.clone()], move |ctx| {
        let mut g = vec![0.0; len];
        let mut k = 0;
        for pl in 0..planes {
            let base = pl * win.h * win.w;
            for oy in 0..win.ho {
                for ox in 0..win.wo {
                    let (ys, xs) = win.ranges(oy, ox);
                    let share = ctx.grad[k] / (ys.len() * xs.len()) as f64;
                    k += 1;
                    for y in ys {
                        for xx in xs.clone() {
                            g[base + y * win.w + xx] += share;
                        }
                    }
                }
            }
        }
        vec![Some(g)]
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_two_window() {
        let x = Tensor::new(vec![1.0, 2.0, 3.0, 4.0], &[1, 1, 2, 2]).unwrap();
        let m = maxpool2d(&x, 2, 1, PaddingSpec::Valid).unwrap();
        let a = avgpool2d(&x, 2, 1, PaddingSpec::Valid).unwrap();
        assert_eq!(m.item(), 4.0);
        assert_eq!(a.item(), 2.5);
    }

    #[test]
    fn constant_field_preserved_with_padding() {
        let x = Tensor::full(&[1, 2, 5, 4], 3.25);
        for y in [
            maxpool2d(&x, 3, 1, PaddingSpec::Same).unwrap(),
            avgpool2d(&x, 3, 1, PaddingSpec::Same).unwrap(),
        ] {
            assert_eq!(y.shape(), x.shape());
            assert!(y.to_vec().iter().all(|&v| v == 3.25));
        }
    }

    #[test]
    fn window_too_large() {
        let x = Tensor::zeros(&[1, 1, 2, 2]);
        assert!(maxpool2d(&x, 3, 1, PaddingSpec::Valid).is_err());
        assert!(avgpool2d(&x, 0, 1, PaddingSpec::Valid).is_err());
    }

    #[test]
    fn maxpool_tie_goes_to_first() {
        let x = Tensor::parameter(vec![5.0, 5.0, 1.0, 5.0], &[1, 1, 2, 2]).unwrap();
        maxpool2d(&x, 2, 2, PaddingSpec::Valid).unwrap().sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn nonoverlapping_avgpool_preserves_scaled_sum() {
        let x = Tensor::new((0..16).map(|v| v as f64).collect(), &[1, 1, 4, 4]).unwrap();
        let y = avgpool2d(&x, 2, 2, PaddingSpec::Valid).unwrap();
        assert_eq!(y.sum().item() * 4.0, x.sum().item());
    }
}
