//! Bayesian-optimization driver for the loss search.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::bo::{bo_suggest, DEFAULT_INIT_TRIALS};
use super::genome::{LossGenome, LossSpace};
use super::median::{grace_epochs, median_stop_check, TrialRecord, TrialStatus};
use crate::error::{Error, Result};
use crate::rng::stream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossSearchConfig {
    /// Number of trials.
    pub budget: usize,
    /// Trials run concurrently per round.
    pub workers: usize,
    pub init_trials: usize,
    /// Epochs per trial, used for the stopping grace period.
    pub epochs: usize,
    pub median_stopping: bool,
    pub seed: u64,
}

impl Default for LossSearchConfig {
    fn default() -> Self {
        Self {
            budget: 40,
            workers: 1,
            init_trials: DEFAULT_INIT_TRIALS,
            epochs: 200,
            median_stopping: true,
            seed: 0,
        }
    }
}

/// What a trainer reports back for one trial.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialOutcome {
    /// Validation metric after each finished epoch.
    pub trace: Vec<f64>,
    pub diverged: bool,
}

/// Trains one candidate loss. `monitor` must be called with the validation
/// metric after every epoch; when it returns true the trial should end.
pub trait TrialRunner: Sync {
    fn run(&self, trial: usize, genome: &LossGenome, monitor: &mut dyn FnMut(f64) -> bool) -> Result<TrialOutcome>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossSearchResult {
    pub best: LossGenome,
    pub best_trial: usize,
    pub best_value: f64,
    pub trials: Vec<TrialRecord>,
}

fn run_trial(
    runner: &dyn TrialRunner,
    id: usize,
    candidate: usize,
    genome: LossGenome,
    completed: &[TrialRecord],
    cfg: &LossSearchConfig,
) -> TrialRecord {
    let grace = grace_epochs(cfg.epochs);
    let mut rec = TrialRecord {
        id,
        candidate,
        genome,
        status: TrialStatus::Running,
        trace: Vec::new(),
        best: f64::INFINITY,
    };
    let mut stopped = false;
    let outcome = {
        let rec_ref = &mut rec;
        let mut monitor = |metric: f64| {
            rec_ref.trace.push(metric);
            stopped = cfg.median_stopping && median_stop_check(rec_ref, completed, rec_ref.trace.len(), grace);
            stopped
        };
        runner.run(id, &genome, &mut monitor)
    };
    match outcome {
        Ok(out) => {
            rec.trace = out.trace;
            rec.best = rec.trace.iter().copied().filter(|v| v.is_finite()).fold(f64::INFINITY, f64::min);
            rec.status = if out.diverged {
                TrialStatus::Diverged
            } else if stopped {
                TrialStatus::Stopped
            } else {
                TrialStatus::Completed
            };
        }
        Err(e) => {
            log::warn!("trial {id} ({genome}) failed: {e}");
            rec.status = TrialStatus::Failed;
        }
    }
    rec
}

/// Runs `config.budget` trials over `space` and returns the candidate with
/// the lowest validation metric among completed trials (stopped trials are
/// used only when nothing completed).
pub fn run_loss_search(space: &LossSpace, runner: &dyn TrialRunner, config: &LossSearchConfig) -> Result<LossSearchResult> {
    if config.budget == 0 || config.workers == 0 {
        return Err(Error::Config("loss search needs a positive budget and worker count".into()));
    }
    let mut rng = stream(config.seed, "loss_search/bo", 0);
    let mut trials: Vec<TrialRecord> = Vec::new();
    let none = HashSet::new();
    while trials.len() < config.budget.min(space.len()) {
        let q = config.workers.min(config.budget - trials.len());
        let observed: Vec<(usize, f64)> = trials.iter().map(|t| (t.candidate, t.best)).collect();
        let picks = bo_suggest(&space.features, &observed, &none, q, config.init_trials, &mut rng)?;
        if picks.is_empty() {
            break;
        }
        // every trial in a round sees the same completed set
        let snapshot: Vec<TrialRecord> = trials.iter().filter(|t| t.status == TrialStatus::Completed).cloned().collect();
        let base = trials.len();
        let round: Vec<TrialRecord> = if picks.len() == 1 {
            vec![run_trial(runner, base, picks[0], space.genomes[picks[0]], &snapshot, config)]
        } else {
            std::thread::scope(|s| {
                let handles: Vec<_> = picks
                    .iter()
                    .enumerate()
                    .map(|(k, &c)| {
                        let snap = &snapshot;
                        s.spawn(move || run_trial(runner, base + k, c, space.genomes[c], snap, config))
                    })
                    .collect();
                handles.into_iter().map(|h| h.join().expect("trial thread panicked")).collect()
            })
        };
        for r in &round {
            log::info!("trial {} {} -> {:?} best {:.4e}", r.id, r.genome, r.status, r.best);
        }
        trials.extend(round);
    }
    let pick = |status: TrialStatus| {
        trials
            .iter()
            .filter(|t| t.status == status && t.best.is_finite())
            .min_by(|a, b| a.best.total_cmp(&b.best).then(a.id.cmp(&b.id)))
    };
    let Some(best) = pick(TrialStatus::Completed).or_else(|| pick(TrialStatus::Stopped)) else {
        let summary: Vec<String> = trials.iter().map(|t| format!("#{} {}: {:?}", t.id, t.genome, t.status)).collect();
        return Err(Error::Search(format!("no trial produced a finite metric [{}]", summary.join("; "))));
    };
    Ok(LossSearchResult {
        best: best.genome,
        best_trial: best.id,
        best_value: best.best,
        trials: trials.clone(),
    })
}
