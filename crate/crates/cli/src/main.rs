use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use picnn_core::arch::{ArchGenome, SpaceKind, Strategy};
use picnn_core::data::{split_and_serialize, store::MANIFEST};
use picnn_core::harness::pipeline::{load_choice, search_space, BEST_ARCH, BEST_LOSS, MODEL, RUN_MANIFEST};
use picnn_core::harness::{
    arch_stage, compare_spaces, final_stage, load_model, loss_stage, prepare, read_report, rerun_from_manifest, test_metric,
    two_stage_pipeline, ArchChoice, ExperimentConfig, LossChoice,
};
use picnn_core::loss::LossEvaluator;
use picnn_core::rng::derive_seed;
use picnn_core::{Error, Result};

#[derive(Parser)]
#[command(name = "picnn", version, about = "Loss and architecture search for physics-informed CNNs")]
struct Cli {
    /// More log output (repeat for more).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum SpaceArg {
    Cnn,
    Unet,
    Cell,
}

impl From<SpaceArg> for SpaceKind {
    fn from(s: SpaceArg) -> Self {
        match s {
            SpaceArg::Cnn => SpaceKind::CnnStack,
            SpaceArg::Unet => SpaceKind::UnetEntire,
            SpaceArg::Cell => SpaceKind::UnetCell,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    Rl,
    Enas,
    Darts,
}

impl From<StrategyArg> for Strategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::Rl => Strategy::Rl,
            StrategyArg::Enas => Strategy::Enas,
            StrategyArg::Darts => Strategy::Darts,
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a dataset and write it with its manifest.
    GenerateData {
        #[arg(long)]
        config: PathBuf,
        /// Defaults to `<output_dir>/data`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Stage 1: Bayesian search over loss functions.
    SearchLoss {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        budget: Option<usize>,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Stage 2: architecture search under a fixed loss.
    SearchArch {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        strategy: Option<StrategyArg>,
        #[arg(long, value_enum)]
        space: Option<SpaceArg>,
        /// A `best_loss.toml` from `search-loss`.
        #[arg(long)]
        loss: Option<PathBuf>,
        #[arg(long)]
        budget: Option<usize>,
    },
    /// Train one network from scratch and evaluate it.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        loss: Option<PathBuf>,
        /// A `best_arch.toml` from `search-arch`.
        #[arg(long)]
        arch: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Recompute the test metric of a trained run.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        /// Defaults to the configured output directory.
        #[arg(long)]
        run: Option<PathBuf>,
    },
    /// Both stages, retraining and test evaluation.
    Pipeline {
        #[arg(long, required_unless_present = "manifest")]
        config: Option<PathBuf>,
        /// Repeat the run recorded in a run manifest.
        #[arg(long, conflicts_with = "config", requires = "out")]
        manifest: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Stage 2 and retraining for several search spaces, tabulated.
    Compare {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum, value_delimiter = ',', default_values = ["unet", "cell"])]
        spaces: Vec<SpaceArg>,
    },
    /// Print a run's report.
    Report {
        #[arg(long)]
        run: PathBuf,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::Diverged { .. } => 3,
        Error::Io { .. } | Error::Format { .. } => 4,
        _ => 1,
    }
}

/// Reuses a dataset already written under the output directory.
fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    let dir = cfg.output_dir.join("data");
    if cfg.data_dir.is_none() && dir.join(MANIFEST).is_file() {
        log::info!("using the dataset in {}", dir.display());
        cfg.data_dir = Some(dir);
    }
    Ok(cfg)
}

fn loss_choice(cfg: &ExperimentConfig, flag: Option<&Path>) -> Result<LossChoice> {
    if let Some(p) = flag {
        return load_choice(p);
    }
    if let Some(genome) = cfg.loss_search.fixed {
        return Ok(LossChoice {
            id: genome.to_string(),
            genome,
            validation: None,
        });
    }
    let p = cfg.output_dir.join(BEST_LOSS);
    if p.is_file() {
        return load_choice(&p);
    }
    Err(Error::Config("no loss given: pass --loss, set loss_search.fixed or run search-loss first".into()))
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::GenerateData { config, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let seed = derive_seed(cfg.seed, "data", 0);
            let raw = cfg.dataset.generate(seed, cfg.data_workers)?;
            let dir = out.unwrap_or_else(|| cfg.output_dir.join("data"));
            let m = split_and_serialize(&raw, &cfg.dataset, seed, &dir)?;
            println!(
                "{} dataset: {} train, {} validation, {} test -> {}",
                m.kind,
                m.counts.train,
                m.counts.validation,
                m.counts.test,
                dir.display()
            );
        }
        Cmd::SearchLoss { config, budget, workers } => {
            let mut cfg = load_config(&config)?;
            if let Some(b) = budget {
                cfg.loss_search.budget = b;
            }
            if let Some(w) = workers {
                cfg.loss_search.workers = w;
            }
            cfg.loss_search.fixed = None;
            cfg.validate()?;
            let p = prepare(&cfg)?;
            let c = loss_stage(&cfg, &p, &cfg.output_dir)?;
            println!("best loss: {} (validation {:?})", c.id, c.validation);
        }
        Cmd::SearchArch {
            config,
            strategy,
            space,
            loss,
            budget,
        } => {
            let mut cfg = load_config(&config)?;
            if let Some(s) = strategy {
                cfg.arch_search.strategy = s.into();
            }
            if let Some(s) = space {
                cfg.arch_search.space = Some(s.into());
            }
            if let Some(b) = budget {
                cfg.arch_search.budget = b;
            }
            cfg.arch_search.fixed = None;
            cfg.validate()?;
            let l = loss_choice(&cfg, loss.as_deref())?;
            let p = prepare(&cfg)?;
            let a = arch_stage(&cfg, &p, &l.genome, cfg.space_kind(), &cfg.output_dir)?;
            println!("best architecture ({}): {}", a.strategy, a.description);
        }
        Cmd::Train {
            config,
            loss,
            arch,
            epochs,
        } => {
            let mut cfg = load_config(&config)?;
            if let Some(e) = epochs {
                cfg.training.epochs = e;
            }
            let l = loss_choice(&cfg, loss.as_deref())?;
            let p = prepare(&cfg)?;
            let kind = cfg.space_kind();
            let a = match (arch, &cfg.arch_search.fixed) {
                (Some(path), _) => load_choice(&path)?,
                (None, Some(c)) => {
                    let space = search_space(&cfg, &p.data, kind, cfg.arch_search.strategy)?;
                    ArchChoice {
                        space: kind,
                        strategy: cfg.arch_search.strategy,
                        description: space.describe(&ArchGenome::new(c.clone())),
                        choices: c.clone(),
                        validation: None,
                    }
                }
                (None, None) if cfg.output_dir.join(BEST_ARCH).is_file() => load_choice(&cfg.output_dir.join(BEST_ARCH))?,
                (None, None) => {
                    let space = search_space(&cfg, &p.data, kind, cfg.arch_search.strategy)?;
                    let g = space.uniform_genome(0);
                    log::info!("no architecture given; training the default network");
                    ArchChoice {
                        space: kind,
                        strategy: cfg.arch_search.strategy,
                        description: space.describe(&g),
                        choices: g.choices,
                        validation: None,
                    }
                }
            };
            let r = final_stage(&cfg, &p, &l, &a, &cfg.output_dir)?;
            println!(
                "{} after {} epochs: train {:.4e}, validation {:.4e}, test {:.4e}",
                r.metric, r.epochs_run, r.metrics.train, r.metrics.validation, r.metrics.test
            );
        }
        Cmd::Evaluate { config, run } => {
            let cfg = load_config(&config)?;
            let dir = run.unwrap_or_else(|| cfg.output_dir.clone());
            let report = read_report(&dir)?;
            let p = prepare(&cfg)?;
            let space = search_space(&cfg, &p.data, report.space, report.strategy)?;
            let net = picnn_core::arch::ArchNet::build(&space, &ArchGenome::new(report.arch.clone()), 0)?;
            load_model(&net, &dir.join(MODEL))?;
            let eval = LossEvaluator::new(report.loss, p.data.kind)?;
            let v = test_metric(&net, &eval, &p.test, cfg.training.metric)?;
            println!("test {} = {v:.6e}", cfg.training.metric);
        }
        Cmd::Pipeline { config, manifest, out } => {
            let (r, m) = match (config, manifest) {
                (_, Some(m)) => rerun_from_manifest(&m, out.expect("clap requires --out"))?,
                (Some(c), None) => {
                    let mut cfg = ExperimentConfig::load(&c)?;
                    if let Some(o) = out {
                        cfg.output_dir = o;
                    }
                    two_stage_pipeline(&cfg)?
                }
                (None, None) => unreachable!("clap requires one of --config and --manifest"),
            };
            println!(
                "loss {} | {} {} | test {} = {:.6e} (bits {})",
                r.loss_id,
                r.space,
                r.arch_id,
                r.metric,
                r.metrics.test,
                m.test_metric_bits.unwrap_or_default()
            );
            println!("manifest: {}", m.config.output_dir.join(RUN_MANIFEST).display());
        }
        Cmd::Compare { config, spaces } => {
            let cfg = ExperimentConfig::load(&config)?;
            let kinds: Vec<SpaceKind> = spaces.into_iter().map(Into::into).collect();
            for row in compare_spaces(&cfg, &kinds)? {
                println!("{}\t{}\t{:.4e}\t{:.4e}", row.dataset, row.search_space, row.validation_error, row.test_error);
            }
        }
        Cmd::Report { run } => {
            let r = read_report(&run)?;
            println!("dataset     {}", r.dataset);
            println!("loss        {}", r.loss_id);
            println!("space       {} ({})", r.space, r.strategy);
            println!("arch        {}", r.arch_id);
            println!("status      {:?} after {} epochs", r.status, r.epochs_run);
            println!(
                "{:<11} train {:.4e} validation {:.4e} test {:.4e}",
                r.metric.to_string(),
                r.metrics.train,
                r.metrics.validation,
                r.metrics.test
            );
            println!("wall clock  {:.1} s", r.wall_clock_s);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
