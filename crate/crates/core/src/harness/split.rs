//! Split-tagged sample sets. Search code only ever receives [`SearchData`],
//! which has no test samples in it; the test split travels separately as a
//! `Samples<Test>` and is read by [`super::test_metric`] alone.
//!
//! ```compile_fail
//! use picnn_core::harness::{validation_metric, Samples, Test};
//! fn search_objective(test: &Samples<Test>) {
//!     // the validation objective refuses test samples
//!     let _ = validation_metric(todo!(), todo!(), test, todo!());
//! }
//! ```

use std::marker::PhantomData;

use crate::data::{GridSample, RawSplits};
use crate::error::{Error, Result};
use crate::pde::PdeKind;

pub trait SplitTag {
    const NAME: &'static str;
}

#[derive(Debug, Clone, Copy)]
pub struct Train;
#[derive(Debug, Clone, Copy)]
pub struct Validation;
#[derive(Debug, Clone, Copy)]
pub struct Test;

impl SplitTag for Train {
    const NAME: &'static str = "train";
}
impl SplitTag for Validation {
    const NAME: &'static str = "validation";
}
impl SplitTag for Test {
    const NAME: &'static str = "test";
}

#[derive(Debug, Clone)]
pub struct Samples<S: SplitTag> {
    items: Vec<GridSample>,
    _tag: PhantomData<S>,
}

impl<S: SplitTag> Samples<S> {
    fn tagged(items: Vec<GridSample>) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::Config(format!("{} split is empty", S::NAME)));
        }
        Ok(Self {
            items,
            _tag: PhantomData,
        })
    }

    pub fn items(&self) -> &[GridSample] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// Training and validation samples: all a search may look at.
#[derive(Debug, Clone)]
pub struct SearchData {
    pub kind: PdeKind,
    pub train: Samples<Train>,
    pub validation: Samples<Validation>,
}

impl SearchData {
    pub fn in_channels(&self) -> usize {
        self.train.items[0].channels()
    }

    /// Mean Dirichlet value over the boundary nodes of the training set.
    pub fn mean_dirichlet(&self) -> Option<f64> {
        let (mut sum, mut count) = (0.0, 0usize);
        for s in &self.train.items {
            let (h, w) = (s.rows(), s.cols());
            for i in 0..h {
                for j in 0..w {
                    if let Some(v) = s.bc.dirichlet_value(i, j, h, w) {
                        sum += v;
                        count += 1;
                    }
                }
            }
        }
        (count > 0).then(|| sum / count as f64)
    }
}

/// Separates the search-visible splits from the test split.
pub fn split(raw: RawSplits) -> Result<(SearchData, Samples<Test>)> {
    let data = SearchData {
        kind: raw.kind,
        train: Samples::tagged(raw.train)?,
        validation: Samples::tagged(raw.validation)?,
    };
    Ok((data, Samples::tagged(raw.test)?))
}
