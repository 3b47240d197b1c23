use picnn_tensor::{no_grad, zero_grads, AdamState, Tensor};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::Metric;
use super::split::{Samples, SearchData, SplitTag, Test, Validation};
use crate::arch::{ArchGenome, ArchNet, SearchSpace};
use crate::data::{stack, GridSample};
use crate::error::{Error, Result};
use crate::loss::{LossBatch, LossEvaluator, WeightState};
use crate::pde::BoundarySpec;
use crate::rng::stream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub metric: Metric,
    /// Seeds the data order.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 2000,
            batch_size: 32,
            lr: 1e-3,
            metric: Metric::RelativeL2,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.lr)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainStatus {
    Completed,
    /// Ended early by the caller.
    Stopped,
    Diverged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    /// Mean training loss per finished epoch.
    pub train_loss: Vec<f64>,
    /// Validation metric per finished epoch.
    pub val_metric: Vec<f64>,
    pub status: TrainStatus,
    /// Epoch whose parameters were kept, if any epoch finished.
    pub best_epoch: Option<usize>,
    pub best_val: f64,
}

impl TrainTrace {
    pub fn epochs_run(&self) -> usize {
        self.train_loss.len()
    }
}

/// Builds a network and sets its output bias to the mean Dirichlet value
/// of the training boundaries, so training starts near the right level.
pub fn fresh_network(space: &SearchSpace, genome: &ArchGenome, data: &SearchData, seed: u64) -> Result<ArchNet> {
    let net = ArchNet::build(space, genome, seed)?;
    if let Some(v) = data.mean_dirichlet() {
        net.set_output_bias(v)?;
    }
    Ok(net)
}

/// Constrained predictions and references, flattened over `items`.
pub(crate) fn predict(
    forward: &dyn Fn(&Tensor) -> Result<Tensor>,
    eval: &LossEvaluator,
    items: &[GridSample],
    batch: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut pred = Vec::new();
    let mut truth = Vec::new();
    no_grad(|| -> Result<()> {
        for chunk in items.chunks(batch.max(1)) {
            let refs: Vec<&GridSample> = chunk.iter().collect();
            let (x, y) = stack(&refs)?;
            let bcs: Vec<BoundarySpec> = chunk.iter().map(|s| s.bc.clone()).collect();
            let out = eval.constrain(&forward(&x)?, &bcs)?;
            pred.extend(out.to_vec());
            truth.extend(y.to_vec());
        }
        Ok(())
    })?;
    Ok((pred, truth))
}

pub(crate) fn split_metric<S: SplitTag>(net: &ArchNet, eval: &LossEvaluator, samples: &Samples<S>, metric: Metric) -> Result<f64> {
    let (p, t) = predict(&|x| net.forward(x), eval, samples.items(), 32)?;
    metric.eval(&p, &t)
}

/// The search objective.
pub fn validation_metric(net: &ArchNet, eval: &LossEvaluator, samples: &Samples<Validation>, metric: Metric) -> Result<f64> {
    split_metric(net, eval, samples, metric)
}

/// Final evaluation, the only reader of the test split.
pub fn test_metric(net: &ArchNet, eval: &LossEvaluator, samples: &Samples<Test>, metric: Metric) -> Result<f64> {
    split_metric(net, eval, samples, metric)
}

/// Epoch-at-a-time Adam training. Keeps the parameters of the epoch with
/// the lowest validation metric and restores them in [`Trainer::finish`].
pub struct Trainer<'a> {
    net: &'a ArchNet,
    eval: &'a LossEvaluator,
    data: &'a SearchData,
    cfg: TrainConfig,
    params: Vec<Tensor>,
    opt: AdamState,
    weights: WeightState,
    order: Vec<usize>,
    rng: ChaCha8Rng,
    trace: TrainTrace,
    best: Option<Vec<Vec<f64>>>,
}

impl<'a> Trainer<'a> {
    pub fn new(net: &'a ArchNet, eval: &'a LossEvaluator, data: &'a SearchData, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        if eval.kind() != data.kind {
            return Err(Error::Config(format!("loss is for {} but data is {}", eval.kind(), data.kind)));
        }
        let params = net.parameters();
        let first = &data.train.items()[0];
        Ok(Self {
            net,
            eval,
            data,
            opt: AdamState::new(&params, cfg.lr),
            params,
            weights: WeightState::new(eval.genome().weight_op, data.train.len(), first.rows() * first.cols()),
            order: (0..data.train.len()).collect(),
            rng: stream(cfg.seed, "train/order", 0),
            cfg: cfg.clone(),
            trace: TrainTrace {
                train_loss: Vec::new(),
                val_metric: Vec::new(),
                status: TrainStatus::Completed,
                best_epoch: None,
                best_val: f64::INFINITY,
            },
            best: None,
        })
    }

    pub fn trace(&self) -> &TrainTrace {
        &self.trace
    }

    pub fn diverged(&self) -> bool {
        self.trace.status == TrainStatus::Diverged
    }

    fn diverge(&mut self, epoch: usize, loss: f64) {
        log::warn!("training diverged at epoch {epoch} (loss {loss})");
        self.trace.status = TrainStatus::Diverged;
    }

    /// Runs one epoch. Returns the validation metric, or `None` once the
    /// run has diverged.
    pub fn epoch(&mut self) -> Result<Option<f64>> {
        if self.diverged() {
            return Ok(None);
        }
        let epoch = self.trace.train_loss.len();
        let data = self.data;
        let items = data.train.items();
        if self.cfg.batch_size < items.len() {
            self.order.shuffle(&mut self.rng);
        }
        let mut sum = 0.0;
        for chunk in self.order.chunks(self.cfg.batch_size) {
            let refs: Vec<&GridSample> = chunk.iter().map(|&i| &items[i]).collect();
            let (x, _) = stack(&refs)?;
            let bcs: Vec<BoundarySpec> = refs.iter().map(|s| s.bc.clone()).collect();
            zero_grads(&self.params);
            let pred = self.net.forward(&x)?;
            let parts = self.eval.evaluate(
                LossBatch {
                    pred: &pred,
                    input: &x,
                    bcs: &bcs,
                    samples: chunk,
                },
                &mut self.weights,
            )?;
            let loss = parts.total.item();
            if !loss.is_finite() {
                log::warn!("training diverged at epoch {epoch} (loss {loss})");
                self.trace.status = TrainStatus::Diverged;
                return Ok(None);
            }
            parts.total.backward()?;
            self.eval.after_backward(&parts, chunk, &mut self.weights)?;
            self.opt.step(&self.params)?;
            sum += loss * chunk.len() as f64;
        }
        zero_grads(&self.params);
        let val = validation_metric(self.net, self.eval, &self.data.validation, self.cfg.metric)?;
        if !val.is_finite() {
            self.diverge(epoch, val);
            return Ok(None);
        }
        self.trace.train_loss.push(sum / items.len() as f64);
        self.trace.val_metric.push(val);
        if val < self.trace.best_val {
            self.trace.best_val = val;
            self.trace.best_epoch = Some(epoch);
            self.best = Some(self.params.iter().map(|p| p.to_vec()).collect());
        }
        if epoch % 100 == 0 {
            log::debug!("epoch {epoch}: loss {:.4e}, val {val:.4e}", sum / items.len() as f64);
        }
        Ok(Some(val))
    }

    /// Restores the best parameters and hands back the trace.
    pub fn finish(mut self, status: TrainStatus) -> Result<TrainTrace> {
        if let Some(best) = &self.best {
            for (p, v) in self.params.iter().zip(best) {
                p.set_data(v)?;
            }
        }
        if self.trace.status != TrainStatus::Diverged {
            self.trace.status = status;
        }
        Ok(self.trace)
    }
}

/// Trains for `cfg.epochs`. `monitor(epoch, val)` runs after every epoch and
/// ends training early by returning true.
pub fn train(
    net: &ArchNet,
    eval: &LossEvaluator,
    data: &SearchData,
    cfg: &TrainConfig,
    mut monitor: impl FnMut(usize, f64) -> bool,
) -> Result<TrainTrace> {
    let mut t = Trainer::new(net, eval, data, cfg)?;
    for e in 0..cfg.epochs {
        match t.epoch()? {
            None => break,
            Some(v) if monitor(e, v) => return t.finish(TrainStatus::Stopped),
            Some(_) => {}
        }
    }
    t.finish(TrainStatus::Completed)
}
