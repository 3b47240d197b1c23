//! Search strategies: multi-trial REINFORCE, DARTS and ENAS.

use std::collections::HashMap;

use picnn_tensor::{no_grad, zero_grads, AdamState, Tensor};
use serde::{Deserialize, Serialize};

use super::controller::{reward, Controller, ControllerConfig};
use super::network::{Selection, Supernet};
use super::space::ArchGenome;
use crate::error::{Error, Result};
use crate::rng::stream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Rl,
    Enas,
    Darts,
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Strategy::Rl => "rl",
            Strategy::Enas => "enas",
            Strategy::Darts => "darts",
        })
    }
}

/// Trains a candidate from scratch and reports its validation error.
pub trait ArchTrialRunner: Sync {
    fn evaluate(&self, trial: usize, genome: &ArchGenome) -> Result<f64>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchTrial {
    pub id: usize,
    pub genome: ArchGenome,
    /// Validation error; infinite for failed runs.
    pub error: f64,
    pub reward: f64,
    pub failed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchSearchResult {
    pub strategy: Strategy,
    pub best: ArchGenome,
    /// Validation error of `best` as seen by the search (a supernet
    /// estimate for the one-shot strategies).
    pub best_error: f64,
    pub trials: Vec<ArchTrial>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MultiTrialConfig {
    pub budget: usize,
    pub workers: usize,
    pub seed: u64,
    pub controller: ControllerConfig,
}

impl Default for MultiTrialConfig {
    fn default() -> Self {
        Self {
            budget: 20,
            workers: 1,
            seed: 0,
            controller: ControllerConfig::default(),
        }
    }
}

fn best_trial(trials: &[ArchTrial]) -> Option<&ArchTrial> {
    trials
        .iter()
        .filter(|t| !t.failed)
        .min_by(|a, b| a.error.total_cmp(&b.error).then(a.id.cmp(&b.id)))
}

/// Samples genomes from the controller, trains each, and feeds the rewards
/// back in trial order. Rounds of `workers` trials run concurrently; a
/// genome seen before reuses its recorded error.
pub fn multi_trial_search(slot_sizes: &[usize], runner: &dyn ArchTrialRunner, cfg: &MultiTrialConfig) -> Result<ArchSearchResult> {
    if cfg.budget == 0 || cfg.workers == 0 {
        return Err(Error::Config("architecture search needs a positive budget and worker count".into()));
    }
    let mut ctrl = Controller::new(slot_sizes, cfg.controller, cfg.seed)?;
    let mut rng = stream(cfg.seed, "arch/rl/sample", 0);
    let mut seen: HashMap<ArchGenome, f64> = HashMap::new();
    let mut trials = Vec::with_capacity(cfg.budget);
    while trials.len() < cfg.budget {
        let q = cfg.workers.min(cfg.budget - trials.len());
        let genomes: Vec<ArchGenome> = (0..q).map(|_| ctrl.sample(&mut rng).map(|s| s.0)).collect::<Result<_>>()?;
        let base = trials.len();
        let fresh: Vec<(usize, &ArchGenome)> = genomes
            .iter()
            .enumerate()
            .filter(|(k, g)| !seen.contains_key(*g) && !genomes[..*k].contains(g))
            .collect();
        let run = |k: usize, g: &ArchGenome| match runner.evaluate(base + k, g) {
            Ok(e) if e.is_finite() => e,
            Ok(e) => {
                log::warn!("trial {} {g}: non-finite error {e}", base + k);
                f64::INFINITY
            }
            Err(err) => {
                log::warn!("trial {} {g} failed: {err}", base + k);
                f64::INFINITY
            }
        };
        let results: Vec<f64> = if fresh.len() <= 1 {
            fresh.iter().map(|&(k, g)| run(k, g)).collect()
        } else {
            std::thread::scope(|s| {
                let hs: Vec<_> = fresh.iter().map(|&(k, g)| s.spawn(move || run(k, g))).collect();
                hs.into_iter().map(|h| h.join().expect("trial thread panicked")).collect()
            })
        };
        for ((_, g), e) in fresh.iter().zip(results) {
            seen.insert((*g).clone(), e);
        }
        for (k, g) in genomes.into_iter().enumerate() {
            let error = seen[&g];
            let r = reward(error);
            ctrl.reinforce_update(&g, r)?;
            log::info!("rl trial {} {g}: error {error:.4e} reward {r:.4e}", base + k);
            trials.push(ArchTrial {
                id: base + k,
                genome: g,
                error,
                reward: r,
                failed: !error.is_finite(),
            });
        }
    }
    let best = best_trial(&trials).ok_or_else(|| Error::Search("every architecture trial failed".into()))?;
    Ok(ArchSearchResult {
        strategy: Strategy::Rl,
        best: best.genome.clone(),
        best_error: best.error,
        trials,
    })
}

/// Losses that drive the one-shot strategies.
pub trait OneShotTask {
    /// Loss on the next training batch; shared weights descend on it.
    fn train_loss(&mut self, net: &dyn Supernet, sel: Selection<'_>) -> Result<Tensor>;
    /// Differentiable validation objective that α descends on.
    fn val_loss(&mut self, net: &dyn Supernet, sel: Selection<'_>) -> Result<Tensor>;

    /// Error of one sampled path, turned into the controller reward.
    /// Defaults to the validation loss.
    fn val_error(&mut self, net: &dyn Supernet, path: &[usize]) -> Result<f64> {
        Ok(no_grad(|| self.val_loss(net, Selection::Path(path)))?.item())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DartsConfig {
    /// Alternating (weights, α) steps.
    pub steps: usize,
    pub weight_lr: f64,
    pub alpha_lr: f64,
}

impl Default for DartsConfig {
    fn default() -> Self {
        Self {
            steps: 200,
            weight_lr: 1e-3,
            alpha_lr: 3e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DartsResult {
    pub genome: ArchGenome,
    pub alphas: Vec<Vec<f64>>,
    /// `(train loss, validation loss)` per step.
    pub trace: Vec<(f64, f64)>,
    /// Largest `|Σ_k P_k - 1|` seen over all slots and steps.
    pub max_normalization_error: f64,
    /// Argmax genome after each step.
    pub argmax_history: Vec<ArchGenome>,
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// First-order DARTS: weights step on the training loss, then α steps on
/// the validation loss, both through the softmax mixture. The result takes
/// the argmax α of every slot.
pub fn darts_search(net: &dyn Supernet, task: &mut dyn OneShotTask, cfg: &DartsConfig) -> Result<DartsResult> {
    let sizes = net.slot_sizes();
    let alphas: Vec<Tensor> = sizes
        .iter()
        .map(|&k| Tensor::parameter(vec![0.0; k], &[k]))
        .collect::<std::result::Result<_, _>>()?;
    let weights = net.weights();
    let mut w_opt = AdamState::new(&weights, cfg.weight_lr);
    let mut a_opt = AdamState::new(&alphas, cfg.alpha_lr);
    let mut trace = Vec::with_capacity(cfg.steps);
    let mut history = Vec::with_capacity(cfg.steps);
    let mut max_norm: f64 = 0.0;
    let probs_of = |alphas: &[Tensor], max_norm: &mut f64| -> Vec<Tensor> {
        alphas
            .iter()
            .map(|a| {
                let p = a.softmax();
                *max_norm = max_norm.max((p.data().iter().sum::<f64>() - 1.0).abs());
                p
            })
            .collect()
    };
    for step in 0..cfg.steps {
        zero_grads(&weights);
        zero_grads(&alphas);
        let probs = probs_of(&alphas, &mut max_norm);
        let lt = task.train_loss(net, Selection::Mixed(&probs))?;
        let train = lt.item();
        if !train.is_finite() {
            return Err(Error::Diverged { epoch: step, loss: train });
        }
        lt.backward()?;
        w_opt.step(&weights)?;

        zero_grads(&weights);
        zero_grads(&alphas);
        let probs = probs_of(&alphas, &mut max_norm);
        let lv = task.val_loss(net, Selection::Mixed(&probs))?;
        let val = lv.item();
        if !val.is_finite() {
            return Err(Error::Diverged { epoch: step, loss: val });
        }
        lv.backward()?;
        a_opt.step(&alphas)?;
        trace.push((train, val));
        history.push(ArchGenome::new(alphas.iter().map(|a| argmax(&a.data())).collect()));
    }
    zero_grads(&weights);
    zero_grads(&alphas);
    probs_of(&alphas, &mut max_norm);
    let alphas: Vec<Vec<f64>> = alphas.iter().map(|a| a.to_vec()).collect();
    Ok(DartsResult {
        genome: ArchGenome::new(alphas.iter().map(|a| argmax(a)).collect()),
        alphas,
        trace,
        max_normalization_error: max_norm,
        argmax_history: history,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnasConfig {
    pub epochs: usize,
    /// Shared-weight steps per epoch, each on a freshly sampled subgraph.
    pub child_steps: usize,
    /// Controller updates per epoch.
    pub controller_steps: usize,
    pub weight_lr: f64,
    pub seed: u64,
    pub controller: ControllerConfig,
}

impl Default for EnasConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            child_steps: 1,
            controller_steps: 1,
            weight_lr: 1e-3,
            seed: 0,
            controller: ControllerConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnasResult {
    pub genome: ArchGenome,
    /// Every controller sample with its validation error.
    pub trials: Vec<ArchTrial>,
    pub train_trace: Vec<f64>,
}

/// One shared-weight step on the subgraph `genome`. Only the activated
/// parameters receive gradients, so nothing else moves.
pub fn enas_child_step(net: &dyn Supernet, task: &mut dyn OneShotTask, genome: &ArchGenome, opt: &mut AdamState) -> Result<f64> {
    let weights = net.weights();
    zero_grads(&weights);
    let loss = task.train_loss(net, Selection::Path(&genome.choices))?;
    let v = loss.item();
    if !v.is_finite() {
        return Err(Error::Diverged { epoch: 0, loss: v });
    }
    loss.backward()?;
    opt.step(&weights)?;
    zero_grads(&weights);
    Ok(v)
}

/// ENAS: alternate shared-weight steps on sampled subgraphs with controller
/// updates rewarded by `1 / validation loss` of fresh samples. Returns the
/// argmax decode of the final policy.
pub fn enas_search(net: &dyn Supernet, task: &mut dyn OneShotTask, cfg: &EnasConfig) -> Result<EnasResult> {
    let mut ctrl = Controller::new(&net.slot_sizes(), cfg.controller, cfg.seed)?;
    let mut rng = stream(cfg.seed, "arch/enas/sample", 0);
    let weights = net.weights();
    let mut opt = AdamState::new(&weights, cfg.weight_lr);
    let mut trials = Vec::new();
    let mut train_trace = Vec::new();
    for epoch in 0..cfg.epochs {
        for _ in 0..cfg.child_steps {
            let (g, _) = ctrl.sample(&mut rng)?;
            match enas_child_step(net, task, &g, &mut opt) {
                Ok(v) => train_trace.push(v),
                Err(Error::Diverged { loss, .. }) => return Err(Error::Diverged { epoch, loss }),
                Err(e) => return Err(e),
            }
        }
        for _ in 0..cfg.controller_steps {
            let (g, _) = ctrl.sample(&mut rng)?;
            let err = task.val_error(net, &g.choices)?;
            let r = reward(err);
            ctrl.reinforce_update(&g, r)?;
            trials.push(ArchTrial {
                id: trials.len(),
                genome: g,
                error: err,
                reward: r,
                failed: !err.is_finite(),
            });
        }
    }
    Ok(EnasResult {
        genome: ctrl.decode_argmax()?,
        trials,
        train_trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    struct Fixed(Vec<f64>, AtomicUsize);

    impl ArchTrialRunner for Fixed {
        fn evaluate(&self, _: usize, g: &ArchGenome) -> Result<f64> {
            self.1.fetch_add(1, Ordering::Relaxed);
            Ok(self.0[g.choices[0]])
        }
    }

    #[test]
    fn budget_one() {
        let r = Fixed(vec![0.5, 0.2], AtomicUsize::new(0));
        let res = multi_trial_search(
            &[2],
            &r,
            &MultiTrialConfig {
                budget: 1,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(res.trials.len(), 1);
        assert_eq!(res.best, res.trials[0].genome);
    }

    #[test]
    fn repeated_genomes_are_not_retrained() {
        let r = Fixed(vec![0.5, 0.2], AtomicUsize::new(0));
        let res = multi_trial_search(
            &[2],
            &r,
            &MultiTrialConfig {
                budget: 12,
                workers: 3,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(res.trials.len(), 12);
        assert!(r.1.load(Ordering::Relaxed) <= 2);
        assert_eq!(res.best.choices, vec![1]);
    }
}
