//! The two-stage search and its individual stages.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use picnn_tensor::io::{self, Dtype, TensorData};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::report::{
    read_toml, report_emit, write_arch_ledger, write_comparison, write_loss_ledger, write_toml, ComparisonRow,
    MetricsReport, SplitMetrics, REPORT_VERSION,
};
use super::runners::{ArchEvalRunner, LossTrialRunner, PdeOneShot};
use super::split::{split, Samples, SearchData, Test};
use super::train::{fresh_network, split_metric, test_metric, train, validation_metric, TrainConfig, TrainStatus};
use crate::arch::{
    darts_search, enas_search, multi_trial_search, ArchGenome, ArchNet, ArchSearchResult, DartsConfig, EnasConfig,
    MultiTrialConfig, SearchSpace, SpaceKind, Strategy,
};
use crate::data::store::spec_hash;
use crate::data::{load_dataset, split_and_serialize};
use crate::error::{Error, Result};
use crate::loss::{run_loss_search, LossEvaluator, LossGenome, LossSearchConfig, LossSpace};
use crate::rng::{derive_seed, stream};

pub const RUN_MANIFEST: &str = "run_manifest.toml";
pub const BEST_LOSS: &str = "best_loss.toml";
pub const BEST_ARCH: &str = "best_arch.toml";
pub const LOSS_LEDGER: &str = "loss_trials.csv";
pub const ARCH_LEDGER: &str = "arch_trials.csv";
pub const COMPARISON: &str = "comparison.csv";
pub const MODEL: &str = "model.ptns";

/// Seeds handed to each component, all derived from the root seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub root: u64,
    pub data: u64,
    pub loss_search: u64,
    pub arch_search: u64,
    pub init: u64,
    pub train: u64,
}

impl Seeds {
    pub fn from_root(root: u64) -> Self {
        Self {
            root,
            data: derive_seed(root, "data", 0),
            loss_search: derive_seed(root, "loss_search", 0),
            arch_search: derive_seed(root, "arch_search", 0),
            init: derive_seed(root, "init", 0),
            train: derive_seed(root, "train", 0),
        }
    }
}

/// Everything needed to repeat a run, written next to its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format_version: u32,
    pub version: String,
    pub seeds: Seeds,
    pub dataset_sha256: String,
    pub config_sha256: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_metric: Option<f64>,
    /// `test_metric` as raw bits, for exact comparison.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_metric_bits: Option<String>,
    pub config: ExperimentConfig,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let m: Self = read_toml(path)?;
        m.config.validate()?;
        Ok(m)
    }
}

/// The loss genome chosen by stage 1, as stored in `best_loss.toml`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossChoice {
    pub id: String,
    pub genome: LossGenome,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub validation: Option<f64>,
}

/// The architecture chosen by stage 2, as stored in `best_arch.toml`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchChoice {
    pub space: SpaceKind,
    pub strategy: Strategy,
    pub choices: Vec<usize>,
    pub description: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub validation: Option<f64>,
}

impl ArchChoice {
    pub fn genome(&self) -> ArchGenome {
        ArchGenome::new(self.choices.clone())
    }
}

pub fn save_choice<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    write_toml(path, v)
}

pub fn load_choice<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    read_toml(path)
}

/// Dataset and seeds of one run.
pub struct Prepared {
    pub data: SearchData,
    pub test: Samples<Test>,
    pub dataset_sha256: String,
    pub seeds: Seeds,
}

fn mkdir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Loads `data_dir` if set; otherwise generates the dataset and writes it to
/// `<output_dir>/data`.
pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    let seeds = Seeds::from_root(cfg.seed);
    let (raw, hash) = match &cfg.data_dir {
        Some(dir) => {
            let (m, raw) = load_dataset(dir)?;
            if m.spec != cfg.dataset {
                log::warn!("dataset in {} differs from the configured spec; using the stored one", dir.display());
            }
            (raw, m.spec_sha256)
        }
        None => {
            let raw = cfg.dataset.generate(seeds.data, cfg.data_workers)?;
            let dir = cfg.output_dir.join("data");
            let m = split_and_serialize(&raw, &cfg.dataset, seeds.data, &dir)?;
            log::info!("wrote {} dataset to {}", raw.kind, dir.display());
            (raw, m.spec_sha256)
        }
    };
    debug_assert!(cfg.data_dir.is_some() || hash == spec_hash(&cfg.dataset)?);
    let (data, test) = split(raw)?;
    Ok(Prepared {
        data,
        test,
        dataset_sha256: hash,
        seeds,
    })
}

fn train_cfg(cfg: &ExperimentConfig, seeds: &Seeds, epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        seed: seeds.train,
        ..cfg.training.clone()
    }
}

/// The search space for `kind` as seen by `strategy`. One-shot strategies
/// use the supernet candidate lists, so a genome is only meaningful
/// together with the strategy that produced it.
pub fn search_space(cfg: &ExperimentConfig, data: &SearchData, kind: SpaceKind, strategy: Strategy) -> Result<SearchSpace> {
    let a = &cfg.arch_search;
    Ok(
        SearchSpace::build(kind, data.in_channels(), &a.cnn_widths, a.unet_init, a.unet_depth, strategy != Strategy::Rl)?
            .with_group_norm(a.group_norm),
    )
}

/// Networks a candidate loss is scored on: random stacked CNNs, or the
/// plain UNet.
pub fn loss_stage_networks(cfg: &ExperimentConfig, p: &Prepared) -> Result<Vec<(SearchSpace, ArchGenome)>> {
    let a = &cfg.arch_search;
    let c = p.data.in_channels();
    if cfg.space_kind() == SpaceKind::CnnStack {
        let space = SearchSpace::cnn_stack(c, &a.cnn_widths, false)?;
        let mut rng = stream(p.seeds.loss_search, "loss/networks", 0);
        Ok((0..cfg.loss_search.networks)
            .map(|_| {
                let g = ArchGenome::new(space.slot_sizes().iter().map(|&k| rng.random_range(0..k)).collect());
                (space.clone(), g)
            })
            .collect())
    } else {
        let space = SearchSpace::unet_entire(c, a.unet_init, a.unet_depth)?.with_group_norm(a.group_norm);
        let g = space.uniform_genome(0);
        Ok(vec![(space, g)])
    }
}

/// Stage 1. Writes the trial ledger and `best_loss.toml` into `out`.
pub fn loss_stage(cfg: &ExperimentConfig, p: &Prepared, out: &Path) -> Result<LossChoice> {
    mkdir(out)?;
    let l = &cfg.loss_search;
    let choice = match l.fixed {
        Some(genome) => LossChoice {
            id: genome.to_string(),
            genome,
            validation: None,
        },
        None => {
            let space = LossSpace::enumerate(l.space.clone())?;
            let runner = LossTrialRunner {
                data: &p.data,
                networks: loss_stage_networks(cfg, p)?,
                train: train_cfg(cfg, &p.seeds, l.epochs),
                seed: p.seeds.init,
            };
            let res = run_loss_search(
                &space,
                &runner,
                &LossSearchConfig {
                    budget: l.budget,
                    workers: l.workers,
                    init_trials: l.init_trials,
                    epochs: l.epochs,
                    median_stopping: l.median_stopping,
                    seed: p.seeds.loss_search,
                },
            );
            let res = match res {
                Ok(r) => r,
                Err(e) => {
                    log::error!("loss search failed: {e}");
                    return Err(e);
                }
            };
            write_loss_ledger(&out.join(LOSS_LEDGER), &res.trials)?;
            log::info!("stage 1 picked {} (validation {:.4e})", res.best, res.best_value);
            LossChoice {
                id: res.best.to_string(),
                genome: res.best,
                validation: Some(res.best_value),
            }
        }
    };
    save_choice(&out.join(BEST_LOSS), &choice)?;
    Ok(choice)
}

/// Stage 2 under a frozen loss. Writes the trial ledger and
/// `best_arch.toml` into `out`.
pub fn arch_stage(cfg: &ExperimentConfig, p: &Prepared, loss: &LossGenome, kind: SpaceKind, out: &Path) -> Result<ArchChoice> {
    mkdir(out)?;
    let a = &cfg.arch_search;
    let space = search_space(cfg, &p.data, kind, a.strategy)?;
    let train = train_cfg(cfg, &p.seeds, a.epochs);
    let (genome, validation) = if let Some(c) = &a.fixed {
        let g = ArchGenome::new(c.clone());
        space.check_genome(&g)?;
        (g, None)
    } else {
        let res = match a.strategy {
            Strategy::Rl => {
                let runner = ArchEvalRunner {
                    data: &p.data,
                    space: space.clone(),
                    loss: *loss,
                    train,
                    seed: p.seeds.init,
                };
                multi_trial_search(
                    &space.slot_sizes(),
                    &runner,
                    &MultiTrialConfig {
                        budget: a.budget,
                        workers: a.workers,
                        seed: p.seeds.arch_search,
                        controller: a.controller,
                    },
                )?
            }
            Strategy::Enas => {
                let net = ArchNet::supernet(&space, p.seeds.init)?;
                if let Some(v) = p.data.mean_dirichlet() {
                    net.set_output_bias(v)?;
                }
                let mut task = PdeOneShot::new(&p.data, *loss, &train)?;
                let r = enas_search(
                    &net,
                    &mut task,
                    &EnasConfig {
                        epochs: a.budget,
                        weight_lr: a.weight_lr,
                        seed: p.seeds.arch_search,
                        controller: a.controller,
                        ..Default::default()
                    },
                )?;
                let best_error = r.trials.iter().filter(|t| t.genome == r.genome).map(|t| t.error).fold(f64::NAN, f64::min);
                ArchSearchResult {
                    strategy: Strategy::Enas,
                    best: r.genome,
                    best_error,
                    trials: r.trials,
                }
            }
            Strategy::Darts => {
                let net = ArchNet::supernet(&space, p.seeds.init)?;
                if let Some(v) = p.data.mean_dirichlet() {
                    net.set_output_bias(v)?;
                }
                let mut task = PdeOneShot::new(&p.data, *loss, &train)?;
                let r = darts_search(
                    &net,
                    &mut task,
                    &DartsConfig {
                        steps: a.budget,
                        weight_lr: a.weight_lr,
                        alpha_lr: a.alpha_lr,
                    },
                )?;
                use crate::arch::OneShotTask;
                let best_error = task.val_error(&net, &r.genome.choices)?;
                ArchSearchResult {
                    strategy: Strategy::Darts,
                    best: r.genome,
                    best_error,
                    trials: Vec::new(),
                }
            }
        };
        write_arch_ledger(&out.join(ARCH_LEDGER), &res)?;
        log::info!("stage 2 ({}) picked {}", a.strategy, space.describe(&res.best));
        let v = res.best_error;
        (res.best, v.is_finite().then_some(v))
    };
    let choice = ArchChoice {
        space: kind,
        strategy: a.strategy,
        description: space.describe(&genome),
        choices: genome.choices,
        validation,
    };
    save_choice(&out.join(BEST_ARCH), &choice)?;
    Ok(choice)
}

/// Flattens the parameters into one tensor file.
pub fn save_model(net: &ArchNet, path: &Path) -> Result<()> {
    let flat: Vec<f64> = net.parameters().iter().flat_map(|p| p.to_vec()).collect();
    io::save(path, &TensorData::new(vec![flat.len()], flat)?, Dtype::F64)?;
    Ok(())
}

pub fn load_model(net: &ArchNet, path: &Path) -> Result<()> {
    let t = io::load(path)?;
    let params = net.parameters();
    let total: usize = params.iter().map(|p| p.numel()).sum();
    if t.data.len() != total {
        return Err(Error::Format {
            path: path.to_path_buf(),
            detail: format!("{} values for {total} parameters", t.data.len()),
        });
    }
    let mut at = 0;
    for p in &params {
        p.set_data(&t.data[at..at + p.numel()])?;
        at += p.numel();
    }
    Ok(())
}

/// Retrains the chosen network from scratch and evaluates it on every
/// split. Writes the model, `report.toml` and `curves.csv` into `out`,
/// even when training diverges.
pub fn final_stage(cfg: &ExperimentConfig, p: &Prepared, loss: &LossChoice, arch: &ArchChoice, out: &Path) -> Result<MetricsReport> {
    mkdir(out)?;
    let started = Instant::now();
    let space = search_space(cfg, &p.data, arch.space, arch.strategy)?;
    let genome = arch.genome();
    let net = fresh_network(&space, &genome, &p.data, p.seeds.init)?;
    let eval = LossEvaluator::new(loss.genome, p.data.kind)?;
    let tc = train_cfg(cfg, &p.seeds, cfg.training.epochs);
    let trace = train(&net, &eval, &p.data, &tc, |_, _| false)?;
    save_model(&net, &out.join(MODEL))?;
    let metric = tc.metric;
    let report = MetricsReport {
        format_version: REPORT_VERSION,
        dataset: p.data.kind,
        metric,
        metrics: SplitMetrics {
            train: split_metric(&net, &eval, &p.data.train, metric)?,
            validation: validation_metric(&net, &eval, &p.data.validation, metric)?,
            test: test_metric(&net, &eval, &p.test, metric)?,
        },
        status: trace.status,
        epochs_run: trace.epochs_run(),
        best_epoch: trace.best_epoch,
        wall_clock_s: started.elapsed().as_secs_f64(),
        loss_id: loss.id.clone(),
        loss: loss.genome,
        space: arch.space,
        strategy: arch.strategy,
        arch_id: arch.description.clone(),
        arch: arch.choices.clone(),
        train_loss: trace.train_loss.clone(),
        val_metric: trace.val_metric.clone(),
    };
    if trace.status == TrainStatus::Diverged && trace.best_epoch.is_none() {
        return Err(Error::Diverged {
            epoch: trace.epochs_run(),
            loss: f64::NAN,
        });
    }
    report_emit(&report, out)?;
    log::info!("test {} = {:.4e}", metric, report.metrics.test);
    Ok(report)
}

fn config_hash(cfg: &ExperimentConfig) -> Result<String> {
    Ok(crate::data::sha256_hex(cfg.to_toml()?.as_bytes()))
}

fn write_manifest(cfg: &ExperimentConfig, p: &Prepared, test: Option<f64>) -> Result<RunManifest> {
    let m = RunManifest {
        format_version: REPORT_VERSION,
        version: env!("CARGO_PKG_VERSION").to_string(),
        seeds: p.seeds,
        dataset_sha256: p.dataset_sha256.clone(),
        config_sha256: config_hash(cfg)?,
        test_metric: test,
        test_metric_bits: test.map(|v| format!("{:016x}", v.to_bits())),
        config: cfg.clone(),
    };
    write_toml(&cfg.output_dir.join(RUN_MANIFEST), &m)?;
    Ok(m)
}

/// Stage 1, stage 2, retraining and test evaluation. Every stage leaves
/// its files in the output directory as it finishes, so a failure keeps
/// what came before.
pub fn two_stage_pipeline(cfg: &ExperimentConfig) -> Result<(MetricsReport, RunManifest)> {
    cfg.validate()?;
    let out = &cfg.output_dir;
    mkdir(out)?;
    let p = prepare(cfg)?;
    write_manifest(cfg, &p, None)?;
    let loss = loss_stage(cfg, &p, out)?;
    let arch = arch_stage(cfg, &p, &loss.genome, cfg.space_kind(), out)?;
    let report = final_stage(cfg, &p, &loss, &arch, out)?;
    let manifest = write_manifest(cfg, &p, Some(report.metrics.test))?;
    Ok((report, manifest))
}

/// Repeats the run recorded in a manifest, writing into `output_dir`.
pub fn rerun_from_manifest(path: &Path, output_dir: PathBuf) -> Result<(MetricsReport, RunManifest)> {
    let m = RunManifest::load(path)?;
    let cfg = ExperimentConfig {
        output_dir,
        ..m.config
    };
    two_stage_pipeline(&cfg)
}

/// Runs stage 2 and the final retraining once per search space under one
/// stage-1 loss, then writes `comparison.csv`.
pub fn compare_spaces(cfg: &ExperimentConfig, spaces: &[SpaceKind]) -> Result<Vec<ComparisonRow>> {
    cfg.validate()?;
    let out = &cfg.output_dir;
    mkdir(out)?;
    let p = prepare(cfg)?;
    let loss = loss_stage(cfg, &p, out)?;
    let mut rows = Vec::new();
    for &kind in spaces {
        let dir = out.join(kind.to_string());
        let arch = arch_stage(cfg, &p, &loss.genome, kind, &dir)?;
        let report = final_stage(cfg, &p, &loss, &arch, &dir)?;
        rows.push(ComparisonRow {
            dataset: p.data.kind,
            search_space: kind,
            strategy: arch.strategy,
            validation_error: report.metrics.validation,
            test_error: report.metrics.test,
            architecture: arch.description,
        });
        write_comparison(&out.join(COMPARISON), &rows)?;
    }
    Ok(rows)
}
