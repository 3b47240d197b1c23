//! Reshaping, concatenation, index maps and small-vector normalizers.

use std::rc::Rc;

use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

/// One output element of an affine gather: `scale * input[src] + offset`,
/// or just `offset` when `src` is `None`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GatherEntry {
    pub src: Option<usize>,
    pub scale: f64,
    pub offset: f64,
}

impl GatherEntry {
    pub fn copy(src: usize) -> Self {
        Self {
            src: Some(src),
            scale: 1.0,
            offset: 0.0,
        }
    }

    pub fn constant(v: f64) -> Self {
        Self {
            src: None,
            scale: 0.0,
            offset: v,
        }
    }

    pub fn affine(src: usize, scale: f64, offset: f64) -> Self {
        Self {
            src: Some(src),
            scale,
            offset,
        }
    }
}

impl Tensor {
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        if n != self.numel() {
            return Err(TensorError::shape(
                "reshape",
                format!("{:?} -> {:?}", self.shape(), shape),
            ));
        }
        Ok(Tensor::from_op(
            self.to_vec(),
            shape.to_vec(),
            "reshape",
            vec![self.clone()],
            |ctx| vec![Some(ctx.grad.to_vec())],
        ))
    }

    /// Affine index map producing a tensor of `shape`. Scatter-adds in the
    /// backward pass, so a source may feed several outputs.
    pub fn gather(&self, shape: &[usize], entries: Rc<[GatherEntry]>) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        if entries.len() != n {
            return Err(TensorError::shape(
                "gather",
                format!("{} entries for output shape {:?}", entries.len(), shape),
            ));
        }
        let len = self.numel();
        if let Some(bad) = entries.iter().filter_map(|e| e.src).find(|&s| s >= len) {
            return Err(TensorError::invalid(
                "gather",
                format!("source index {bad} out of range for {len} elements"),
            ));
        }
        let out: Vec<f64> = {
            let d = self.data();
            entries
                .iter()
                .map(|e| match e.src {
                    Some(s) => e.scale * d[s] + e.offset,
                    None => e.offset,
                })
                .collect()
        };
        Ok(Tensor::from_op(
            out,
            shape.to_vec(),
            "gather",
            vec![self.clone()],
            move |ctx| {
                let mut g = vec![0.0; len];
                for (e, &go) in entries.iter().zip(ctx.grad) {
                    if let Some(s) = e.src {
                        g[s] += e.scale * go;
                    }
                }
                vec![Some(g)]
            },
        ))
    }

    /// Element `index` (flat) as a scalar tensor.
    pub fn select(&self, index: usize) -> Result<Tensor> {
        if index >= self.numel() {
            return Err(TensorError::invalid(
                "select",
                format!("index {index} out of range for {} elements", self.numel()),
            ));
        }
        let n = self.numel();
        let v = self.data()[index];
        Ok(Tensor::from_op(vec![v], vec![], "select", vec![self.clone()], move |ctx| {
            let mut g = vec![0.0; n];
            g[index] = ctx.grad[0];
            vec![Some(g)]
        }))
    }

    /// Softmax over all elements (treated as one vector).
    pub fn softmax(&self) -> Tensor {
        let out = softmax_values(&self.data());
        Tensor::from_op(out, self.shape().to_vec(), "softmax", vec![self.clone()], |ctx| {
            let y = ctx.output;
            let dot: f64 = y.iter().zip(ctx.grad).map(|(a, b)| a * b).sum();
            let g = y.iter().zip(ctx.grad).map(|(&yi, &gi)| yi * (gi - dot)).collect();
            vec![Some(g)]
        })
    }

    /// Log-softmax over all elements (treated as one vector).
    pub fn log_softmax(&self) -> Tensor {
        let out: Vec<f64> = {
            let d = self.data();
            let m = d.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + d.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            d.iter().map(|v| v - lse).collect()
        };
        Tensor::from_op(out, self.shape().to_vec(), "log_softmax", vec![self.clone()], |ctx| {
            let total: f64 = ctx.grad.iter().sum();
            let g = ctx
                .output
                .iter()
                .zip(ctx.grad)
                .map(|(&ly, &gi)| gi - ly.exp() * total)
                .collect();
            vec![Some(g)]
        })
    }
}

pub fn softmax_values(x: &[f64]) -> Vec<f64> {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Concatenates tensors along `dim`; all other dimensions must agree.
pub fn concat(tensors: &[Tensor], dim: usize) -> Result<Tensor> {
    let first = tensors
        .first()
        .ok_or_else(|| TensorError::invalid("concat", "no tensors"))?;
    let nd = first.ndim();
    if dim >= nd {
        return Err(TensorError::invalid(
            "concat",
            format!("dim {dim} for rank {nd}"),
        ));
    }
    for t in tensors {
        let ok = t.ndim() == nd
            && (0..nd).all(|d| d == dim || t.shape()[d] == first.shape()[d]);
        if !ok {
            return Err(TensorError::shape(
                "concat",
                format!("{:?} vs {:?} along dim {dim}", first.shape(), t.shape()),
            ));
        }
    }
    let outer: usize = first.shape()[..dim].iter().product();
    let inner: usize = first.shape()[dim + 1..].iter().product();
    let sizes: Vec<usize> = tensors.iter().map(|t| t.shape()[dim]).collect();
    let total: usize = sizes.iter().sum();
    let mut shape = first.shape().to_vec();
    shape[dim] = total;

    let mut out = Vec::with_capacity(outer * total * inner);
    {
        let datas: Vec<_> = tensors.iter().map(|t| t.data()).collect();
        for o in 0..outer {
            for (d, &sz) in datas.iter().zip(&sizes) {
                out.extend_from_slice(&d[o * sz * inner..(o + 1) * sz * inner]);
            }
        }
    }
    Ok(Tensor::from_op(out, shape, "concat", tensors.to_vec(), move |ctx| {
        let mut grads: Vec<Vec<f64>> = sizes.iter().map(|&sz| Vec::with_capacity(outer * sz * inner)).collect();
        let mut pos = 0;
        for _ in 0..outer {
            for (g, &sz) in grads.iter_mut().zip(&sizes) {
                g.extend_from_slice(&ctx.grad[pos..pos + sz * inner]);
                pos += sz * inner;
            }
        }
        grads
            .into_iter()
            .zip(ctx.inputs)
            .map(|(g, t)| t.requires_grad().then_some(g))
            .collect()
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn concat_channels() {
        let a = Tensor::new(vec![1.0, 2.0, 3.0, 4.0], &[2, 1, 2]).unwrap();
        let b = Tensor::new(vec![5.0, 6.0, 7.0, 8.0], &[2, 1, 2]).unwrap();
        let c = concat(&[a, b], 1).unwrap();
        assert_eq!(c.shape(), &[2, 2, 2]);
        assert_eq!(c.to_vec(), vec![1.0, 2.0, 5.0, 6.0, 3.0, 4.0, 7.0, 8.0]);
    }

    #[test]
    fn concat_rejects_mismatch() {
        let a = Tensor::zeros(&[1, 2, 3]);
        let b = Tensor::zeros(&[1, 2, 4]);
        assert!(concat(&[a, b], 1).is_err());
    }

    #[test]
    fn softmax_sums_to_one() {
        let x = Tensor::new(vec![0.5, -1.0, 3.0], &[3]).unwrap();
        let s: f64 = x.softmax().to_vec().iter().sum();
        assert!((s - 1.0).abs() < 1e-15);
    }

    #[test]
    fn gather_scatter_adds() {
        let x = Tensor::parameter(vec![1.0, 2.0], &[2]).unwrap();
        let map: Rc<[GatherEntry]> = vec![
            GatherEntry::copy(0),
            GatherEntry::affine(0, -1.0, 4.0),
            GatherEntry::constant(9.0),
        ]
        .into();
        let y = x.gather(&[3], map).unwrap();
        assert_eq!(y.to_vec(), vec![1.0, 3.0, 9.0]);
        y.sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![0.0, 0.0]);
    }
}
