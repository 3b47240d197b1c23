use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::train::TrainConfig;
use crate::arch::{ControllerConfig, SpaceKind, Strategy};
use crate::data::DatasetSpec;
use crate::error::{Error, Result};
use crate::loss::{LossGenome, LossSpaceConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossStage {
    pub budget: usize,
    pub workers: usize,
    /// Random trials before the surrogate takes over.
    pub init_trials: usize,
    /// Training epochs per trial.
    pub epochs: usize,
    pub median_stopping: bool,
    /// Networks each candidate loss is trained on. Stacked-CNN spaces draw
    /// them at random; UNet spaces use the plain UNet and ignore this.
    pub networks: usize,
    pub space: LossSpaceConfig,
    /// Skips the search and uses this genome.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fixed: Option<LossGenome>,
}

impl Default for LossStage {
    fn default() -> Self {
        Self {
            budget: 40,
            workers: 1,
            init_trials: 8,
            epochs: 200,
            median_stopping: true,
            networks: 5,
            space: LossSpaceConfig::default(),
            fixed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchStage {
    pub strategy: Strategy,
    /// Defaults to the stacked CNN for heat and the entire UNet otherwise.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub space: Option<SpaceKind>,
    /// Trials for `rl`, epochs for `enas`, steps for `darts`.
    pub budget: usize,
    pub workers: usize,
    /// Training epochs of each `rl` trial.
    pub epochs: usize,
    pub cnn_widths: Vec<usize>,
    pub unet_init: usize,
    pub unet_depth: usize,
    /// GroupNorm in the UNet conv blocks. Off by default: per-sample
    /// normalization discards the amplitude of the input field, which a
    /// linear source-to-solution map needs.
    pub group_norm: bool,
    pub controller: ControllerConfig,
    pub weight_lr: f64,
    pub alpha_lr: f64,
    /// Skips the search and uses these choices.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fixed: Option<Vec<usize>>,
}

impl Default for ArchStage {
    fn default() -> Self {
        Self {
            strategy: Strategy::Rl,
            space: None,
            budget: 20,
            workers: 1,
            epochs: 200,
            cnn_widths: vec![16, 32, 32, 16],
            unet_init: 8,
            unet_depth: 2,
            group_norm: false,
            controller: ControllerConfig::default(),
            weight_lr: 1e-3,
            alpha_lr: 3e-3,
            fixed: None,
        }
    }
}

/// One experiment, read from a TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Root seed. Every component derives its own stream from it.
    #[serde(default)]
    pub seed: u64,
    pub output_dir: PathBuf,
    pub dataset: DatasetSpec,
    /// Reads a dataset written by `generate-data` instead of generating one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_dir: Option<PathBuf>,
    /// Threads for data generation.
    #[serde(default = "one")]
    pub data_workers: usize,
    #[serde(default)]
    pub loss_search: LossStage,
    #[serde(default)]
    pub arch_search: ArchStage,
    #[serde(default)]
    pub training: TrainConfig,
}

fn one() -> usize {
    1
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and validates. Relative paths inside are taken relative to the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if cfg.output_dir.is_relative() {
            cfg.output_dir = base.join(&cfg.output_dir);
        }
        if let Some(d) = &cfg.data_dir {
            if d.is_relative() {
                cfg.data_dir = Some(base.join(d));
            }
        }
        cfg.check_files()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let l = &self.loss_search;
        let a = &self.arch_search;
        if l.budget == 0 || a.budget == 0 {
            return Err(Error::Config("search budgets must be at least 1".into()));
        }
        if l.workers == 0 || a.workers == 0 || self.data_workers == 0 {
            return Err(Error::Config("worker counts must be at least 1".into()));
        }
        if l.networks == 0 {
            return Err(Error::Config("loss_search.networks must be at least 1".into()));
        }
        if a.cnn_widths.is_empty() || a.unet_init == 0 || a.unet_depth == 0 {
            return Err(Error::Config("empty network plan".into()));
        }
        if !(a.weight_lr > 0.0 && a.alpha_lr > 0.0 && a.controller.lr > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if let Some(g) = &l.fixed {
            g.validate()?;
        }
        self.training.validate()
    }

    pub fn check_files(&self) -> Result<()> {
        if let Some(d) = &self.data_dir {
            let m = d.join(crate::data::store::MANIFEST);
            if !m.is_file() {
                return Err(Error::Config(format!("data_dir {} has no dataset manifest", d.display())));
            }
        }
        Ok(())
    }

    /// The space searched in stage 2.
    pub fn space_kind(&self) -> SpaceKind {
        self.arch_search.space.unwrap_or(match self.dataset {
            DatasetSpec::Heat(_) => SpaceKind::CnnStack,
            _ => SpaceKind::UnetEntire,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_fills_defaults() {
        let cfg = ExperimentConfig::from_toml("output_dir = \"out\"\n[dataset]\nkind = \"heat\"\n").unwrap();
        assert_eq!(cfg.training.lr, 1e-3);
        assert_eq!(cfg.space_kind(), SpaceKind::CnnStack);
        let again = ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn rejects_bad_values() {
        let base = "output_dir = \"out\"\n[dataset]\nkind = \"poisson\"\n";
        assert!(ExperimentConfig::from_toml(&format!("{base}[loss_search]\nbudget = 0\n")).is_err());
        assert!(ExperimentConfig::from_toml(&format!("{base}[training]\nlr = -1.0\n")).is_err());
        assert!(ExperimentConfig::from_toml(&format!("{base}[arch_search]\nbogus = 1\n")).is_err());
        assert!(ExperimentConfig::from_toml("output_dir = 1").is_err());
    }
}
