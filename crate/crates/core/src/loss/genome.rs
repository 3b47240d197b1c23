//! Points of the loss-function search space and their encoding.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pde::{ConstraintMode, KernelFamily, UnaryOp};

/// How per-point residual weights are produced.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum WeightOp {
    /// Accumulates a 0/1 mask of the `n` largest residuals every step.
    /// `None` means 1% of the residual points (at least one).
    TopN {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        n: Option<usize>,
    },
    /// `η (r - min r) / (max r - min r)`, recomputed every step.
    Normalize { eta: f64 },
    /// Trainable weights, ascended with step `rho`.
    PointwiseGrad { rho: f64 },
    /// All ones.
    Unitize,
}

impl WeightOp {
    pub fn name(&self) -> &'static str {
        match self {
            WeightOp::TopN { .. } => "top_n",
            WeightOp::Normalize { .. } => "normalize",
            WeightOp::PointwiseGrad { .. } => "pointwise_grad",
            WeightOp::Unitize => "unitize",
        }
    }
}

impl fmt::Display for WeightOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WeightOp::TopN { n: Some(n) } => write!(f, "top_n({n})"),
            WeightOp::TopN { n: None } => write!(f, "top_n(1%)"),
            WeightOp::Normalize { eta } => write!(f, "normalize({eta})"),
            WeightOp::PointwiseGrad { rho } => write!(f, "pointwise_grad({rho})"),
            WeightOp::Unitize => write!(f, "unitize"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossGenome {
    pub constraint: ConstraintMode,
    pub kernel: KernelFamily,
    pub unary: UnaryOp,
    pub gradient_enhance: bool,
    pub weight_op: WeightOp,
    pub add_ones: bool,
    pub boundary_loss: bool,
    pub lambda_r: f64,
    pub lambda_b: f64,
    pub lambda_g: f64,
}

impl LossGenome {
    /// Plain mean-squared residual plus mean-squared boundary mismatch.
    pub fn vanilla() -> Self {
        Self {
            constraint: ConstraintMode::Soft,
            kernel: KernelFamily::Central2,
            unary: UnaryOp::Square,
            gradient_enhance: false,
            weight_op: WeightOp::Unitize,
            add_ones: false,
            boundary_loss: true,
            lambda_r: 1.0,
            lambda_b: 1.0,
            lambda_g: 0.0,
        }
    }

    /// Vanilla residual loss with hard boundary padding and no penalty.
    pub fn hard_baseline() -> Self {
        Self {
            constraint: ConstraintMode::Hard,
            boundary_loss: false,
            lambda_b: 0.0,
            ..Self::vanilla()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let lam = [self.lambda_r, self.lambda_b, self.lambda_g];
        if lam.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return Err(Error::invalid("loss_genome", format!("loss weights must be nonnegative, got {lam:?}")));
        }
        match self.weight_op {
            WeightOp::TopN { n: Some(0) } => Err(Error::invalid("loss_genome", "top-N needs N >= 1")),
            WeightOp::Normalize { eta } if !(eta > 0.0 && eta.is_finite()) => {
                Err(Error::invalid("loss_genome", format!("eta must be positive, got {eta}")))
            }
            WeightOp::PointwiseGrad { rho } if !(rho >= 0.0 && rho.is_finite()) => {
                Err(Error::invalid("loss_genome", format!("rho must be nonnegative, got {rho}")))
            }
            _ => Ok(()),
        }
    }

    /// Same genome with every loss weight multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            lambda_r: self.lambda_r * c,
            lambda_b: self.lambda_b * c,
            lambda_g: self.lambda_g * c,
            ..*self
        }
    }
}

impl fmt::Display for LossGenome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}/{}/{}/{}{}/{}{}",
            self.constraint,
            self.kernel,
            self.unary,
            self.weight_op,
            if self.add_ones { "+1" } else { "" },
            if self.gradient_enhance {
                format!("grad({})", self.lambda_g)
            } else {
                "nograd".into()
            },
            if self.boundary_loss {
                format!("/bnd({})", self.lambda_b)
            } else {
                String::new()
            },
        )
    }
}

/// Discrete levels of the searchable numeric settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossSpaceConfig {
    pub constraints: Vec<ConstraintMode>,
    pub kernels: Vec<KernelFamily>,
    pub unaries: Vec<UnaryOp>,
    pub etas: Vec<f64>,
    pub rhos: Vec<f64>,
    pub lambda_gs: Vec<f64>,
    pub lambda_bs: Vec<f64>,
    pub lambda_r: f64,
}

impl Default for LossSpaceConfig {
    fn default() -> Self {
        Self {
            constraints: ConstraintMode::ALL.to_vec(),
            kernels: KernelFamily::ALL.to_vec(),
            unaries: UnaryOp::ALL.to_vec(),
            etas: vec![0.5, 1.0, 2.0],
            rhos: vec![0.01, 0.1],
            lambda_gs: vec![0.01, 0.1],
            lambda_bs: vec![1.0, 10.0],
            lambda_r: 1.0,
        }
    }
}

/// The enumerated candidate set with a fixed feature encoding.
#[derive(Debug, Clone)]
pub struct LossSpace {
    pub config: LossSpaceConfig,
    pub genomes: Vec<LossGenome>,
    pub features: Vec<Vec<f64>>,
}

fn level(v: f64, levels: &[f64]) -> f64 {
    if levels.len() < 2 {
        return 0.0;
    }
    let (lo, hi) = (levels[0].ln(), levels[levels.len() - 1].ln());
    if hi == lo {
        0.0
    } else {
        (v.ln() - lo) / (hi - lo)
    }
}

fn one_hot<T: PartialEq>(v: &T, all: &[T], out: &mut Vec<f64>) {
    out.extend(all.iter().map(|a| if a == v { 1.0 } else { 0.0 }));
}

impl LossSpace {
    pub fn enumerate(config: LossSpaceConfig) -> Result<Self> {
        if config.constraints.is_empty() || config.kernels.is_empty() || config.unaries.is_empty() {
            return Err(Error::Config("loss space needs at least one constraint, kernel and unary".into()));
        }
        let mut ops = vec![WeightOp::TopN { n: None }];
        ops.extend(config.etas.iter().map(|&eta| WeightOp::Normalize { eta }));
        ops.extend(config.rhos.iter().map(|&rho| WeightOp::PointwiseGrad { rho }));
        ops.push(WeightOp::Unitize);
        let enhance: Vec<Option<f64>> = std::iter::once(None).chain(config.lambda_gs.iter().map(|&l| Some(l))).collect();
        let bound: Vec<Option<f64>> = std::iter::once(None).chain(config.lambda_bs.iter().map(|&l| Some(l))).collect();
        let mut genomes = Vec::new();
        for &constraint in &config.constraints {
            for &kernel in &config.kernels {
                for &unary in &config.unaries {
                    for g in &enhance {
                        for &weight_op in &ops {
                            for add_ones in [false, true] {
                                for b in &bound {
                                    genomes.push(LossGenome {
                                        constraint,
                                        kernel,
                                        unary,
                                        gradient_enhance: g.is_some(),
                                        weight_op,
                                        add_ones,
                                        boundary_loss: b.is_some(),
                                        lambda_r: config.lambda_r,
                                        lambda_b: b.unwrap_or(0.0),
                                        lambda_g: g.unwrap_or(0.0),
                                    });
                                }
                            }
                        }
                    }
                }
            }
        }
        let mut space = Self {
            config,
            genomes,
            features: Vec::new(),
        };
        space.features = space.genomes.iter().map(|g| space.encode(g)).collect();
        Ok(space)
    }

    pub fn len(&self) -> usize {
        self.genomes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.genomes.is_empty()
    }

    /// One-hot categorical dimensions plus log-scaled numeric levels in `[0, 1]`.
    pub fn encode(&self, g: &LossGenome) -> Vec<f64> {
        let c = &self.config;
        let mut f = Vec::with_capacity(24);
        one_hot(&g.constraint, &c.constraints, &mut f);
        one_hot(&g.kernel, &c.kernels, &mut f);
        one_hot(&g.unary, &c.unaries, &mut f);
        f.push(g.gradient_enhance as u8 as f64);
        f.push(if g.gradient_enhance { level(g.lambda_g, &c.lambda_gs) } else { 0.0 });
        let names = ["top_n", "normalize", "pointwise_grad", "unitize"];
        one_hot(&g.weight_op.name(), &names, &mut f);
        f.push(match g.weight_op {
            WeightOp::Normalize { eta } => level(eta, &c.etas),
            WeightOp::PointwiseGrad { rho } => level(rho, &c.rhos),
            _ => 0.0,
        });
        f.push(g.add_ones as u8 as f64);
        f.push(g.boundary_loss as u8 as f64);
        f.push(if g.boundary_loss { level(g.lambda_b, &c.lambda_bs) } else { 0.0 });
        f
    }

    pub fn index_of(&self, g: &LossGenome) -> Option<usize> {
        self.genomes.iter().position(|x| x == g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_space_size_and_vanilla_membership() {
        let s = LossSpace::enumerate(LossSpaceConfig::default()).unwrap();
        assert_eq!(s.len(), 3 * 4 * 3 * 3 * 7 * 2 * 3);
        assert!(s.index_of(&LossGenome::vanilla()).is_some());
        let dims = s.features[0].len();
        assert!(s.features.iter().all(|f| f.len() == dims && f.iter().all(|v| (0.0..=1.0).contains(v))));
    }

    #[test]
    fn encodings_are_distinct() {
        let s = LossSpace::enumerate(LossSpaceConfig::default()).unwrap();
        let mut f = s.features.clone();
        f.sort_by(|a, b| a.partial_cmp(b).unwrap());
        f.dedup();
        assert_eq!(f.len(), s.len());
    }

    #[test]
    fn genome_toml_round_trip() {
        let g = LossGenome {
            weight_op: WeightOp::TopN { n: None },
            ..LossGenome::vanilla()
        };
        let text = toml::to_string(&g).unwrap();
        assert_eq!(toml::from_str::<LossGenome>(&text).unwrap(), g);
        assert!(LossGenome {
            lambda_b: -1.0,
            ..g
        }
        .validate()
        .is_err());
    }
}
