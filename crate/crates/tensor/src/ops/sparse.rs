//! Constant sparse matrices acting on flattened tensors.

use std::rc::Rc;

use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

/// Compressed sparse row matrix. Values are constants, never parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    pub nrows: usize,
    pub ncols: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from per-row `(column, value)` lists. Duplicate columns in a
    /// row are summed.
    pub fn from_rows(ncols: usize, rows: &[Vec<(usize, f64)>]) -> Result<Self> {
        let mut indptr = Vec::with_capacity(rows.len() + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for row in rows {
            let mut row = row.clone();
            row.sort_by_key(|e| e.0);
            let start = indices.len();
            for (c, v) in row {
                if c >= ncols {
                    return Err(TensorError::invalid("csr", format!("column {c} >= {ncols}")));
                }
                if indices.len() > start && *indices.last().unwrap() == c {
                    *values.last_mut().unwrap() += v;
                } else {
                    indices.push(c);
                    values.push(v);
                }
            }
            indptr.push(indices.len());
        }
        Ok(Self {
            nrows: rows.len(),
            ncols,
            indptr,
            indices,
            values,
        })
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.indptr[i]..self.indptr[i + 1];
        self.indices[r.clone()].iter().copied().zip(self.values[r].iter().copied())
    }

    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate().take(self.nrows) {
            *yi = self.row(i).map(|(c, v)| v * x[c]).sum();
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        self.matvec_into(x, &mut y);
        y
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.nrows)
            .map(|i| self.row(i).find(|&(c, _)| c == i).map_or(0.0, |e| e.1))
            .collect()
    }
}

impl Tensor {
    /// `y = A · flatten(self)`, reshaped to `shape`.
    pub fn spmv(&self, a: Rc<CsrMatrix>, shape: &[usize]) -> Result<Tensor> {
        if a.ncols != self.numel() || a.nrows != shape.iter().product::<usize>() {
            return Err(TensorError::shape(
                "spmv",
                format!(
                    "matrix {}x{} against input {:?} and output {:?}",
                    a.nrows,
                    a.ncols,
                    self.shape(),
                    shape
                ),
            ));
        }
        let out = a.matvec(&self.data());
        let len = self.numel();
        Ok(Tensor::from_op(out, shape.to_vec(), "spmv", vec![self.clone()], move |ctx| {
            let mut g = vec![0.0; len];
            for (i, &go) in ctx.grad.iter().enumerate() {
                if go != 0.0 {
                    for (c, v) in a.row(i) {
                        g[c] += v * go;
                    }
                }
            }
            vec![Some(g)]
        }))
    }
}
