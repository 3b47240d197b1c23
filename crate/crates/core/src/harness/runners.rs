//! Adapters from the search drivers to actual training runs.

use picnn_tensor::{no_grad, Tensor};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use super::split::SearchData;
use super::train::{fresh_network, predict, validation_metric, TrainConfig, TrainStatus, Trainer};
use crate::arch::{ArchGenome, ArchTrialRunner, OneShotTask, SearchSpace, Selection, Supernet};
use crate::data::{stack, GridSample};
use crate::error::Result;
use crate::loss::{LossBatch, LossEvaluator, LossGenome, LossParts, TrialOutcome, TrialRunner, WeightState};
use crate::pde::BoundarySpec;
use crate::rng::stream;

/// Scores a loss genome by training a fixed set of networks with it. The
/// per-epoch validation metric is averaged over the networks.
pub struct LossTrialRunner<'a> {
    pub data: &'a SearchData,
    pub networks: Vec<(SearchSpace, ArchGenome)>,
    pub train: TrainConfig,
    pub seed: u64,
}

impl TrialRunner for LossTrialRunner<'_> {
    fn run(&self, trial: usize, genome: &LossGenome, monitor: &mut dyn FnMut(f64) -> bool) -> Result<TrialOutcome> {
        let eval = LossEvaluator::new(*genome, self.data.kind)?;
        let nets = self
            .networks
            .iter()
            .enumerate()
            .map(|(i, (space, g))| fresh_network(space, g, self.data, self.seed.wrapping_add(i as u64)))
            .collect::<Result<Vec<_>>>()?;
        let mut trainers = nets
            .iter()
            .map(|n| Trainer::new(n, &eval, self.data, &self.train))
            .collect::<Result<Vec<_>>>()?;
        let mut trace = Vec::new();
        for _ in 0..self.train.epochs {
            let mut sum = 0.0;
            for t in &mut trainers {
                match t.epoch()? {
                    Some(v) => sum += v,
                    None => {
                        log::info!("loss trial {trial} ({genome}) diverged");
                        return Ok(TrialOutcome { trace, diverged: true });
                    }
                }
            }
            let v = sum / trainers.len() as f64;
            trace.push(v);
            if monitor(v) {
                break;
            }
        }
        Ok(TrialOutcome { trace, diverged: false })
    }
}

/// Trains one architecture under a fixed loss and reports its best
/// validation metric.
pub struct ArchEvalRunner<'a> {
    pub data: &'a SearchData,
    pub space: SearchSpace,
    pub loss: LossGenome,
    pub train: TrainConfig,
    pub seed: u64,
}

impl ArchTrialRunner for ArchEvalRunner<'_> {
    fn evaluate(&self, trial: usize, genome: &ArchGenome) -> Result<f64> {
        let eval = LossEvaluator::new(self.loss, self.data.kind)?;
        let net = fresh_network(&self.space, genome, self.data, self.seed)?;
        let mut t = Trainer::new(&net, &eval, self.data, &self.train)?;
        for _ in 0..self.train.epochs {
            if t.epoch()?.is_none() {
                break;
            }
        }
        let trace = t.finish(TrainStatus::Completed)?;
        if trace.status == TrainStatus::Diverged && trace.best_epoch.is_none() {
            log::info!("architecture trial {trial} diverged");
            return Ok(f64::INFINITY);
        }
        // best epoch parameters are restored, so this is the best value
        validation_metric(&net, &eval, &self.data.validation, self.train.metric)
    }
}

/// Physics loss on training batches, reference error on validation, for
/// the weight-sharing strategies.
pub struct PdeOneShot<'a> {
    data: &'a SearchData,
    eval: LossEvaluator,
    weights: WeightState,
    batch: usize,
    order: Vec<usize>,
    cursor: usize,
    rng: ChaCha8Rng,
    metric: super::metrics::Metric,
    /// Trainable point weights are ascended one call late, once their
    /// gradient from the previous step exists.
    pending: Option<(LossParts, Vec<usize>)>,
}

impl<'a> PdeOneShot<'a> {
    pub fn new(data: &'a SearchData, loss: LossGenome, train: &TrainConfig) -> Result<Self> {
        train.validate()?;
        let first = &data.train.items()[0];
        Ok(Self {
            data,
            eval: LossEvaluator::new(loss, data.kind)?,
            weights: WeightState::new(loss.weight_op, data.train.len(), first.rows() * first.cols()),
            batch: train.batch_size,
            order: (0..data.train.len()).collect(),
            cursor: usize::MAX,
            rng: stream(train.seed, "oneshot/order", 0),
            metric: train.metric,
            pending: None,
        })
    }

    fn next_batch(&mut self) -> Vec<usize> {
        let n = self.order.len();
        if self.batch >= n {
            return self.order.clone();
        }
        if self.cursor >= n {
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        let end = (self.cursor + self.batch).min(n);
        let b = self.order[self.cursor..end].to_vec();
        self.cursor = end;
        b
    }

    fn val_items(&self) -> &'a [GridSample] {
        self.data.validation.items()
    }
}

impl OneShotTask for PdeOneShot<'_> {
    fn train_loss(&mut self, net: &dyn Supernet, sel: Selection<'_>) -> Result<Tensor> {
        if let Some((parts, idx)) = self.pending.take() {
            self.eval.after_backward(&parts, &idx, &mut self.weights)?;
        }
        let idx = self.next_batch();
        let items = self.data.train.items();
        let refs: Vec<&GridSample> = idx.iter().map(|&i| &items[i]).collect();
        let (x, _) = stack(&refs)?;
        let bcs: Vec<BoundarySpec> = refs.iter().map(|s| s.bc.clone()).collect();
        let pred = net.forward_with(&x, sel)?;
        let parts = self.eval.evaluate(
            LossBatch {
                pred: &pred,
                input: &x,
                bcs: &bcs,
                samples: &idx,
            },
            &mut self.weights,
        )?;
        let total = parts.total.clone();
        self.pending = Some((parts, idx));
        Ok(total)
    }

    /// Mean squared error of the constrained prediction over the whole
    /// validation split.
    fn val_loss(&mut self, net: &dyn Supernet, sel: Selection<'_>) -> Result<Tensor> {
        let items = self.val_items();
        let refs: Vec<&GridSample> = items.iter().collect();
        let (x, y) = stack(&refs)?;
        let bcs: Vec<BoundarySpec> = items.iter().map(|s| s.bc.clone()).collect();
        let pred = self.eval.constrain(&net.forward_with(&x, sel)?, &bcs)?;
        Ok(pred.sub(&y)?.pow2().mean())
    }

    fn val_error(&mut self, net: &dyn Supernet, path: &[usize]) -> Result<f64> {
        let items = self.val_items();
        let (p, t) = no_grad(|| predict(&|x| net.forward_with(x, Selection::Path(path)), &self.eval, items, 32))?;
        self.metric.eval(&p, &t)
    }
}
