//! 2-D cross-correlation in NCHW layout: dense (im2col + GEMM), depthwise,
//! and the depthwise-separable composition of the two.

use crate::error::{Result, TensorError};
use crate::ops::linalg::gemm;
use crate::tensor::Tensor;

/// Zero padding applied around the spatial dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PaddingSpec {
    Valid,
    /// `k / 2` on each side; keeps the size for odd kernels at stride 1.
    Same,
    Explicit { h: usize, w: usize },
}

impl PaddingSpec {
    pub fn resolve(self, kh: usize, kw: usize) -> (usize, usize) {
        match self {
            PaddingSpec::Valid => (0, 0),
            PaddingSpec::Same => (kh / 2, kw / 2),
            PaddingSpec::Explicit { h, w } => (h, w),
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Geometry {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    ph: usize,
    pw: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    fn new(
        op: &'static str,
        (c, h, w): (usize, usize, usize),
        (kh, kw): (usize, usize),
        stride: usize,
        padding: PaddingSpec,
    ) -> Result<Self> {
        if stride == 0 {
            return Err(TensorError::invalid(op, "stride must be >= 1"));
        }
        if kh == 0 || kw == 0 {
            return Err(TensorError::invalid(op, "empty kernel"));
        }
        let (ph, pw) = padding.resolve(kh, kw);
        if h + 2 * ph < kh || w + 2 * pw < kw {
            return Err(TensorError::shape(
                op,
                format!(
                    "kernel {kh}x{kw} larger than padded input {}x{}",
                    h + 2 * ph,
                    w + 2 * pw
                ),
            ));
        }
        let ho = (h + 2 * ph - kh) / stride + 1;
        let wo = (w + 2 * pw - kw) / stride + 1;
        Ok(Self {
            c,
            h,
            w,
            kh,
            kw,
            stride,
            ph,
            pw,
            ho,
            wo,
        })
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.ph == 0 && self.pw == 0
    }

    /// Input row/col for output position and kernel tap, if inside the image.
    #[inline]
    fn src(&self, o: usize, k: usize, pad: usize, limit: usize) -> Option<usize> {
        let p = (o * self.stride + k) as isize - pad as isize;
        (p >= 0 && (p as usize) < limit).then_some(p as usize)
    }
}

fn im2col(g: &Geometry, x: &[f64], cols: &mut [f64]) {
    let p = g.ho * g.wo;
    for c in 0..g.c {
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = ((c * g.kh + i) * g.kw + j) * p;
                for oy in 0..g.ho {
                    let dst = &mut cols[row + oy * g.wo..row + (oy + 1) * g.wo];
                    match g.src(oy, i, g.ph, g.h) {
                        None => dst.fill(0.0),
                        Some(y) => {
                            let src_row = &x[(c * g.h + y) * g.w..(c * g.h + y + 1) * g.w];
                            for (ox, d) in dst.iter_mut().enumerate() {
                                *d = match g.src(ox, j, g.pw, g.w) {
                                    Some(xx) => src_row[xx],
                                    None => 0.0,
                                };
                            }
                        }
                    }
                }
            }
        }
    }
}

fn col2im(g: &Geometry, cols: &[f64], dx: &mut [f64]) {
    let p = g.ho * g.wo;
    for c in 0..g.c {
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = ((c * g.kh + i) * g.kw + j) * p;
                for oy in 0..g.ho {
                    let Some(y) = g.src(oy, i, g.ph, g.h) else {
                        continue;
                    };
                    let src = &cols[row + oy * g.wo..row + (oy + 1) * g.wo];
                    let dst_row = &mut dx[(c * g.h + y) * g.w..(c * g.h + y + 1) * g.w];
                    for (ox, &v) in src.iter().enumerate() {
                        if let Some(xx) = g.src(ox, j, g.pw, g.w) {
                            dst_row[xx] += v;
                        }
                    }
                }
            }
        }
    }
}

fn check4(op: &'static str, name: &str, t: &Tensor) -> Result<[usize; 4]> {
    match t.shape() {
        &[a, b, c, d] => Ok([a, b, c, d]),
        s => Err(TensorError::shape(op, format!("{name} must be 4-D, got {s:?}"))),
    }
}

/// Dense 2-D cross-correlation. `input` is `[N, C, H, W]`, `weight` is
/// `[Co, C, kh, kw]`, `bias` is `[Co]`.
pub fn conv2d(
    input: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    padding: PaddingSpec,
) -> Result<Tensor> {
    const OP: &str = "conv2d";
    let [n, c, h, w] = check4(OP, "input", input)?;
    let [co, ci, kh, kw] = check4(OP, "weight", weight)?;
    if ci != c {
        return Err(TensorError::shape(
            OP,
            format!("input has {c} channels (dim 1) but weight expects {ci} (dim 1)"),
        ));
    }
    if let Some(b) = bias {
        if b.shape() != [co] {
            return Err(TensorError::shape(
                OP,
                format!("bias shape {:?}, expected [{co}]", b.shape()),
            ));
        }
    }
    let g = Geometry::new(OP, (c, h, w), (kh, kw), stride, padding)?;
    let k = c * kh * kw;
    let p = g.ho * g.wo;
    let in_len = c * h * w;

    let mut out = vec![0.0; n * co * p];
    {
        let x = input.data();
        let wd = weight.data();
        let mut cols = if g.is_pointwise() { Vec::new() } else { vec![0.0; k * p] };
        for s in 0..n {
            let xs = &x[s * in_len..(s + 1) * in_len];
            let os = &mut out[s * co * p..(s + 1) * co * p];
            if let Some(b) = bias {
                let bd = b.data();
                for (o, chunk) in os.chunks_mut(p).enumerate() {
                    chunk.fill(bd[o]);
                }
            }
            let beta = if bias.is_some() { 1.0 } else { 0.0 };
            if g.is_pointwise() {
                gemm(co, k, p, &wd, false, xs, false, os, beta);
            } else {
                im2col(&g, xs, &mut cols);
                gemm(co, k, p, &wd, false, &cols, false, os, beta);
            }
        }
    }

    let mut inputs = vec![input.clone(), weight.clone()];
    if let Some(b) = bias {
        inputs.push(b.clone());
    }
    Ok(Tensor::from_op(
        out,
        vec![n, co, g.ho, g.wo],
        OP,
        inputs,
        move |ctx| {
            let x = ctx.inputs[0].data();
            let wd = ctx.inputs[1].data();
            let need_x = ctx.inputs[0].requires_grad();
            let need_w = ctx.inputs[1].requires_grad();
            let mut gx = need_x.then(|| vec![0.0; n * in_len]);
            let mut gw = need_w.then(|| vec![0.0; co * k]);
            let mut cols = if g.is_pointwise() { Vec::new() } else { vec![0.0; k * p] };
            let mut dcols = if g.is_pointwise() { Vec::new() } else { vec![0.0; k * p] };
            for s in 0..n {
                let xs = &x[s * in_len..(s + 1) * in_len];
                let gs = &ctx.grad[s * co * p..(s + 1) * co * p];
                if g.is_pointwise() {
                    if let Some(gw) = gw.as_mut() {
                        gemm(co, p, k, gs, false, xs, true, gw, 1.0);
                    }
                    if let Some(gx) = gx.as_mut() {
                        let dst = &mut gx[s * in_len..(s + 1) * in_len];
                        gemm(k, co, p, &wd, true, gs, false, dst, 0.0);
                    }
                } else {
                    if let Some(gw) = gw.as_mut() {
                        im2col(&g, xs, &mut cols);
                        gemm(co, p, k, gs, false, &cols, true, gw, 1.0);
                    }
                    if let Some(gx) = gx.as_mut() {
                        gemm(k, co, p, &wd, true, gs, false, &mut dcols, 0.0);
                        col2im(&g, &dcols, &mut gx[s * in_len..(s + 1) * in_len]);
                    }
                }
            }
            let mut res = vec![gx, gw];
            if ctx.inputs.len() == 3 {
                let gb = ctx.inputs[2].requires_grad().then(|| {
                    let mut gb = vec![0.0; co];
                    for s in 0..n {
                        for (o, acc) in gb.iter_mut().enumerate() {
                            let base = (s * co + o) * p;
                            *acc += ctx.grad[base..base + p].iter().sum::<f64>();
                        }
                    }
                    gb
                });
                res.push(gb);
            }
            res
        },
    ))
}

/// One filter per channel: `weight` is `[C, 1, kh, kw]`.
pub fn depthwise_conv2d(
    input: &Tensor,
    weight: &Tensor,
    stride: usize,
    padding: PaddingSpec,
) -> Result<Tensor> {
    const OP: &str = "depthwise_conv2d";
    let [n, c, h, w] = check4(OP, "input", input)?;
    let [cw, one, kh, kw] = check4(OP, "weight", weight)?;
    if cw != c || one != 1 {
        return Err(TensorError::shape(
            OP,
            format!("weight {:?} for {c} input channels (expected [{c}, 1, kh, kw])", weight.shape()),
        ));
    }
    let g = Geometry::new(OP, (c, h, w), (kh, kw), stride, padding)?;
    let p = g.ho * g.wo;
    let mut out = vec![0.0; n * c * p];
    {
        let x = input.data();
        let wd = weight.data();
        for s in 0..n {
            for ch in 0..c {
                let xs = &x[(s * c + ch) * h * w..(s * c + ch + 1) * h * w];
                let ker = &wd[ch * kh * kw..(ch + 1) * kh * kw];
                let os = &mut out[(s * c + ch) * p..(s * c + ch + 1) * p];
                for oy in 0..g.ho {
                    for ox in 0..g.wo {
                        let mut acc = 0.0;
                        for i in 0..kh {
                            let Some(y) = g.src(oy, i, g.ph, h) else { continue };
                            for j in 0..kw {
                                if let Some(xx) = g.src(ox, j, g.pw, w) {
                                    acc += ker[i * kw + j] * xs[y * w + xx];
                                }
                            }
                        }
                        os[oy * g.wo + ox] = acc;
                    }
                }
            }
        }
    }
    Ok(Tensor::from_op(
        out,
        vec![n, c, g.ho, g.wo],
        OP,
        vec![input.clone(), weight.clone()],
        move |ctx| {
            let x = ctx.inputs[0].data();
            let wd = ctx.inputs[1].data();
            let need_x = ctx.inputs[0].requires_grad();
            let need_w = ctx.inputs[1].requires_grad();
            let mut gx = vec![0.0; if need_x { n * c * h * w } else { 0 }];
            let mut gw = vec![0.0; if need_w { c * kh * kw } else { 0 }];
            for s in 0..n {
                for ch in 0..c {
                    let base_in = (s * c + ch) * h * w;
                    let base_out = (s * c + ch) * p;
                    for oy in 0..g.ho {
                        for ox in 0..g.wo {
                            let go = ctx.grad[base_out + oy * g.wo + ox];
                            if go == 0.0 {
                                continue;
                            }
                            for i in 0..kh {
                                let Some(y) = g.src(oy, i, g.ph, h) else { continue };
                                for j in 0..kw {
                                    let Some(xx) = g.src(ox, j, g.pw, w) else { continue };
                                    let ki = ch * kh * kw + i * kw + j;
                                    let xi = base_in + y * w + xx;
                                    if need_x {
                                        gx[xi] += wd[ki] * go;
                                    }
                                    if need_w {
                                        gw[ki] += x[xi] * go;
                                    }
                                }
                            }
                        }
                    }
                }
            }
            vec![need_x.then_some(gx), need_w.then_some(gw)]
        },
    ))
}

/// Depthwise convolution followed by a 1×1 pointwise convolution.
pub fn depthwise_separable_conv2d(
    input: &Tensor,
    depthwise_weight: &Tensor,
    pointwise_weight: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    padding: PaddingSpec,
) -> Result<Tensor> {
    let pw_shape = pointwise_weight.shape();
    if pw_shape.len() != 4 || pw_shape[2] != 1 || pw_shape[3] != 1 {
        return Err(TensorError::shape(
            "depthwise_separable_conv2d",
            format!("pointwise weight must be [Co, C, 1, 1], got {pw_shape:?}"),
        ));
    }
    let mid = depthwise_conv2d(input, depthwise_weight, stride, padding)?;
    conv2d(&mid, pointwise_weight, bias, 1, PaddingSpec::Valid)
}
