//! Steady heat conduction on an annulus with a varying inner temperature.

use picnn_tensor::io::TensorData;
use serde::{Deserialize, Serialize};

use super::{GridSample, RawSplits};
use crate::error::{Error, Result};
use crate::pde::{BoundarySpec, EdgeCondition, Geometry, PdeKind};

/// Polar grid: rows are radii from `r_inner` to `r_outer` inclusive, columns
/// are `n_theta` equispaced angles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnnulusSpec {
    pub r_inner: f64,
    pub r_outer: f64,
    pub center: [f64; 2],
    pub n_rho: usize,
    pub n_theta: usize,
    pub t_out: f64,
    pub train_t_in: Vec<f64>,
    pub test_t_in: Vec<f64>,
}

impl Default for AnnulusSpec {
    fn default() -> Self {
        Self {
            r_inner: 0.5,
            r_outer: 1.0,
            center: [0.0, 0.0],
            n_rho: 32,
            n_theta: 64,
            t_out: 0.0,
            train_t_in: vec![1.0, 7.0],
            test_t_in: vec![2.0, 3.0, 4.0, 5.0, 6.0],
        }
    }
}

impl AnnulusSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.r_inner && self.r_inner < self.r_outer) {
            return Err(Error::invalid("annulus", format!("radii {} / {}", self.r_inner, self.r_outer)));
        }
        if self.n_rho < 3 || self.n_theta < 3 {
            return Err(Error::invalid("annulus", format!("grid {}x{}", self.n_rho, self.n_theta)));
        }
        Ok(())
    }

    pub fn radius(&self, row: usize) -> f64 {
        self.r_inner + (self.r_outer - self.r_inner) * row as f64 / (self.n_rho - 1) as f64
    }

    pub fn boundary(&self, t_in: f64) -> BoundarySpec {
        BoundarySpec {
            top: EdgeCondition::dirichlet(self.n_theta, t_in),
            bottom: EdgeCondition::dirichlet(self.n_theta, self.t_out),
            left: EdgeCondition::Periodic,
            right: EdgeCondition::Periodic,
            geometry: Geometry::PolarAnnulus {
                r_inner: self.r_inner,
                r_outer: self.r_outer,
            },
        }
    }

    /// Analytic radial solution.
    pub fn reference(&self, t_in: f64, rho: f64) -> f64 {
        self.t_out + (t_in - self.t_out) * (self.r_outer / rho).ln() / (self.r_outer / self.r_inner).ln()
    }

    pub fn sample(&self, t_in: f64) -> Result<GridSample> {
        self.validate()?;
        let (nr, nt) = (self.n_rho, self.n_theta);
        let mut input = Vec::with_capacity(nr * nt);
        let mut reference = Vec::with_capacity(nr * nt);
        for i in 0..nr {
            let s = i as f64 / (nr - 1) as f64;
            let lin = t_in + (self.t_out - t_in) * s;
            let exact = self.reference(t_in, self.radius(i));
            input.extend(std::iter::repeat_n(lin, nt));
            reference.extend(std::iter::repeat_n(exact, nt));
        }
        GridSample::new(
            TensorData::new(vec![1, 1, nr, nt], input)?,
            TensorData::new(vec![1, 1, nr, nt], reference)?,
            self.boundary(t_in),
        )
    }
}

/// Training temperatures double as the validation set.
pub fn gen_heat_annulus(spec: &AnnulusSpec) -> Result<RawSplits> {
    let train = spec.train_t_in.iter().map(|&t| spec.sample(t)).collect::<Result<Vec<_>>>()?;
    let test = spec.test_t_in.iter().map(|&t| spec.sample(t)).collect::<Result<Vec<_>>>()?;
    Ok(RawSplits {
        kind: PdeKind::Heat,
        validation: train.clone(),
        train,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn boundary_values_and_half_log_point() {
        let spec = AnnulusSpec::default();
        assert!((spec.reference(7.0, 1.0)).abs() < 1e-15);
        assert!((spec.reference(7.0, 0.5) - 7.0).abs() < 1e-14);
        assert!((spec.reference(7.0, 0.5f64.sqrt()) - 3.5).abs() < 1e-14);
        let s = spec.sample(7.0).unwrap();
        assert_eq!(s.reference.shape, vec![1, 1, 32, 64]);
        assert_eq!(s.input.data[0], 7.0);
        assert_eq!(*s.input.data.last().unwrap(), 0.0);
    }

    #[test]
    fn splits() {
        let d = gen_heat_annulus(&AnnulusSpec::default()).unwrap();
        assert_eq!((d.train.len(), d.validation.len(), d.test.len()), (2, 2, 5));
        assert_eq!(d.train, d.validation);
    }
}
