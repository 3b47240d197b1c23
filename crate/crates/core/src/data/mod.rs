//! Parametric PDE datasets with independently computed reference solutions.

pub mod darcy;
pub mod grf;
pub mod heat;
pub mod poisson;
pub mod solver;
pub mod store;

use picnn_tensor::io::TensorData;
use picnn_tensor::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pde::{BoundarySpec, PdeKind};

pub use darcy::{darcy_flux_cuts, gen_darcy_dataset, solve_darcy_fv, DarcySpec};
pub use grf::{kl_expansion, sample_grf, sample_grf_with, GrfSpec, KlBasis};
pub use heat::{gen_heat_annulus, AnnulusSpec};
pub use poisson::{gen_poisson_dataset, solve_poisson_fd, PoissonSpec};
pub use solver::{pcg, PcgReport, SparseSystem};
pub use store::{load_dataset, read_manifest, sha256_hex, split_and_serialize, DatasetManifest};

/// One (parameter field, reference solution) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSample {
    /// `[1, C, H, W]`.
    pub input: TensorData,
    /// `[1, 1, H, W]`.
    pub reference: TensorData,
    pub bc: BoundarySpec,
}

impl GridSample {
    pub fn new(input: TensorData, reference: TensorData, bc: BoundarySpec) -> Result<Self> {
        let (ins, rs) = (&input.shape, &reference.shape);
        if ins.len() != 4 || rs.len() != 4 || ins[0] != 1 || rs[0] != 1 || rs[1] != 1 || ins[2..] != rs[2..] {
            return Err(Error::invalid("grid_sample", format!("input {ins:?} vs reference {rs:?}")));
        }
        bc.validate(rs[2], rs[3])?;
        Ok(Self { input, reference, bc })
    }

    pub fn rows(&self) -> usize {
        self.reference.shape[2]
    }

    pub fn cols(&self) -> usize {
        self.reference.shape[3]
    }

    pub fn channels(&self) -> usize {
        self.input.shape[1]
    }
}

/// Stacks samples along the batch axis: `(inputs [N,C,H,W], references [N,1,H,W])`.
pub fn stack(samples: &[&GridSample]) -> Result<(Tensor, Tensor)> {
    let first = samples.first().ok_or_else(|| Error::invalid("stack", "empty batch"))?;
    let mut ins = Vec::new();
    let mut refs = Vec::new();
    for s in samples {
        if s.input.shape != first.input.shape {
            return Err(Error::invalid("stack", "samples differ in shape"));
        }
        ins.extend_from_slice(&s.input.data);
        refs.extend_from_slice(&s.reference.data);
    }
    let n = samples.len();
    let mut ishape = first.input.shape.clone();
    ishape[0] = n;
    let mut rshape = first.reference.shape.clone();
    rshape[0] = n;
    Ok((Tensor::new(ins, &ishape)?, Tensor::new(refs, &rshape)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub validation: usize,
    pub test: usize,
}

/// Generated samples before split tagging.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSplits {
    pub kind: PdeKind,
    pub train: Vec<GridSample>,
    pub validation: Vec<GridSample>,
    pub test: Vec<GridSample>,
}

/// Runs `f(i)` for `i in 0..n` on up to `workers` threads, keeping order.
pub(crate) fn par_map<T: Send>(n: usize, workers: usize, f: impl Fn(usize) -> Result<T> + Sync) -> Result<Vec<T>> {
    let workers = workers.clamp(1, n.max(1));
    if workers == 1 {
        return (0..n).map(f).collect();
    }
    let f = &f;
    let chunks: Vec<Result<Vec<T>>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|w| s.spawn(move || (w * n / workers..(w + 1) * n / workers).map(f).collect::<Result<Vec<T>>>()))
            .collect();
        handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
    });
    let mut out = Vec::with_capacity(n);
    for c in chunks {
        out.extend(c?);
    }
    Ok(out)
}

/// Everything needed to regenerate a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSpec {
    Heat(AnnulusSpec),
    Poisson(PoissonSpec),
    Darcy(DarcySpec),
}

impl DatasetSpec {
    pub fn kind(&self) -> PdeKind {
        match self {
            DatasetSpec::Heat(_) => PdeKind::Heat,
            DatasetSpec::Poisson(_) => PdeKind::Poisson,
            DatasetSpec::Darcy(_) => PdeKind::Darcy,
        }
    }

    pub fn generate(&self, seed: u64, workers: usize) -> Result<RawSplits> {
        match self {
            DatasetSpec::Heat(s) => gen_heat_annulus(s),
            DatasetSpec::Poisson(s) => gen_poisson_dataset(s, seed, workers),
            DatasetSpec::Darcy(s) => gen_darcy_dataset(s, seed, workers),
        }
    }
}
