//! Recurrent policy that emits one operation per slot, trained with
//! REINFORCE against a moving-average baseline.

use picnn_tensor::{concat, no_grad, sgd_step, zero_grads, Tensor};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::space::ArchGenome;
use crate::error::{Error, Result};
use crate::rng::stream;

/// Errors at or below this are clamped before taking the reciprocal.
pub const REWARD_EPS: f64 = 1e-8;

/// `1 / e`, with `e` clamped to [`REWARD_EPS`]. A non-finite error earns 0.
pub fn reward(error: f64) -> f64 {
    if error.is_nan() || error == f64::INFINITY {
        log::warn!("non-finite validation error {error}; reward 0");
        return 0.0;
    }
    if error <= REWARD_EPS {
        if error <= 0.0 {
            log::warn!("validation error {error} <= 0 clamped to {REWARD_EPS}");
        }
        return 1.0 / REWARD_EPS;
    }
    1.0 / error
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControllerConfig {
    pub hidden: usize,
    pub embedding: usize,
    /// Ascent step size.
    pub lr: f64,
    /// Decay of the moving-average reward baseline.
    pub baseline_decay: f64,
    /// Half-width of the uniform initialization of recurrent weights.
    pub init_range: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            embedding: 32,
            lr: 0.05,
            baseline_decay: 0.9,
            init_range: 0.1,
        }
    }
}

#[derive(Debug, Clone)]
struct Gate {
    w: Tensor,
    b: Tensor,
}

/// LSTM cell, embedding tables and per-slot softmax heads.
#[derive(Debug, Clone)]
pub struct Controller {
    cfg: ControllerConfig,
    slot_sizes: Vec<usize>,
    gates: [Gate; 4],
    start: Tensor,
    embeddings: Vec<Tensor>,
    heads: Vec<Gate>,
    baseline: Option<f64>,
    updates: usize,
}

impl Controller {
    /// Heads start at zero, so the initial policy is uniform in every slot.
    pub fn new(slot_sizes: &[usize], cfg: ControllerConfig, seed: u64) -> Result<Self> {
        if slot_sizes.is_empty() || slot_sizes.contains(&0) {
            return Err(Error::invalid("controller", format!("slot sizes {slot_sizes:?}")));
        }
        let (h, e, r) = (cfg.hidden, cfg.embedding, cfg.init_range);
        let mut rng = stream(seed, "controller/init", 0);
        let mut uni = |n: usize, shape: &[usize]| -> Result<Tensor> {
            let v: Vec<f64> = (0..n).map(|_| rng.random_range(-r..r)).collect();
            Ok(Tensor::parameter(v, shape)?)
        };
        let mut gate = || -> Result<Gate> {
            Ok(Gate {
                w: uni((e + h) * h, &[e + h, h])?,
                b: Tensor::parameter(vec![0.0; h], &[1, h])?,
            })
        };
        let gates = [gate()?, gate()?, gate()?, gate()?];
        let start = uni(e, &[1, e])?;
        let embeddings = slot_sizes.iter().map(|&k| uni(k * e, &[k, e])).collect::<Result<Vec<_>>>()?;
        let heads = slot_sizes
            .iter()
            .map(|&k| {
                Ok(Gate {
                    w: Tensor::parameter(vec![0.0; h * k], &[h, k])?,
                    b: Tensor::parameter(vec![0.0; k], &[1, k])?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            cfg,
            slot_sizes: slot_sizes.to_vec(),
            gates,
            start,
            embeddings,
            heads,
            baseline: None,
            updates: 0,
        })
    }

    pub fn slot_sizes(&self) -> &[usize] {
        &self.slot_sizes
    }

    pub fn baseline(&self) -> Option<f64> {
        self.baseline
    }

    pub fn config(&self) -> &ControllerConfig {
        &self.cfg
    }

    pub fn parameters(&self) -> Vec<Tensor> {
        let mut p = Vec::new();
        for g in self.gates.iter().chain(&self.heads) {
            p.push(g.w.clone());
            p.push(g.b.clone());
        }
        p.push(self.start.clone());
        p.extend(self.embeddings.iter().cloned());
        p
    }

    fn step(&self, x: &Tensor, h: &Tensor, c: &Tensor) -> Result<(Tensor, Tensor)> {
        let xh = concat(&[x.clone(), h.clone()], 1)?;
        let pre = |g: &Gate| -> Result<Tensor> { Ok(xh.matmul(&g.w)?.add(&g.b)?) };
        let i = pre(&self.gates[0])?.sigmoid();
        let f = pre(&self.gates[1])?.sigmoid();
        let g = pre(&self.gates[2])?.tanh();
        let o = pre(&self.gates[3])?.sigmoid();
        let c2 = f.mul(c)?.add(&i.mul(&g)?)?;
        let h2 = o.mul(&c2.tanh())?;
        Ok((h2, c2))
    }

    fn one_hot(k: usize, idx: usize) -> Result<Tensor> {
        let mut v = vec![0.0; k];
        v[idx] = 1.0;
        Ok(Tensor::new(v, &[1, k])?)
    }

    /// Walks the slots. `choose(slot, log_probs)` picks the action from the
    /// head's log-probabilities. Returns the actions and their log-probs.
    fn rollout(&self, mut choose: impl FnMut(usize, &[f64]) -> Result<usize>) -> Result<(Vec<usize>, Vec<Tensor>)> {
        let hdim = self.cfg.hidden;
        let mut h = Tensor::zeros(&[1, hdim]);
        let mut c = Tensor::zeros(&[1, hdim]);
        let mut x = self.start.clone();
        let mut actions = Vec::with_capacity(self.slot_sizes.len());
        let mut logps = Vec::with_capacity(self.slot_sizes.len());
        for (s, &k) in self.slot_sizes.iter().enumerate() {
            (h, c) = self.step(&x, &h, &c)?;
            let head = &self.heads[s];
            let lp = h.matmul(&head.w)?.add(&head.b)?.log_softmax();
            let a = choose(s, &lp.data())?;
            if a >= k {
                return Err(Error::invalid("controller", format!("action {a} for slot {s} of size {k}")));
            }
            logps.push(lp.select(a)?);
            actions.push(a);
            x = Self::one_hot(k, a)?.matmul(&self.embeddings[s])?;
        }
        Ok((actions, logps))
    }

    /// Samples a genome autoregressively; returns per-slot log-probabilities.
    pub fn sample(&self, rng: &mut impl Rng) -> Result<(ArchGenome, Vec<f64>)> {
        let (a, lp) = no_grad(|| {
            self.rollout(|_, lps| {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (i, l) in lps.iter().enumerate() {
                    acc += l.exp();
                    if u < acc {
                        return Ok(i);
                    }
                }
                Ok(lps.len() - 1)
            })
        })?;
        Ok((ArchGenome::new(a), lp.iter().map(|t| t.item()).collect()))
    }

    /// Most probable op in every slot, each conditioned on the previous picks.
    pub fn decode_argmax(&self) -> Result<ArchGenome> {
        let (a, _) = no_grad(|| {
            self.rollout(|_, lps| {
                let mut best = 0;
                for (i, l) in lps.iter().enumerate() {
                    if *l > lps[best] {
                        best = i;
                    }
                }
                Ok(best)
            })
        })?;
        Ok(ArchGenome::new(a))
    }

    /// Per-slot probability vectors along the path of `genome`.
    pub fn probabilities(&self, genome: &ArchGenome) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::new();
        no_grad(|| {
            self.rollout(|s, lps| {
                out.push(lps.iter().map(|l| l.exp()).collect());
                genome
                    .choices
                    .get(s)
                    .copied()
                    .ok_or_else(|| Error::invalid("controller", "genome shorter than the slot list"))
            })
        })?;
        Ok(out)
    }

    /// `Σ_t log π(a_t | a_<t)` as a differentiable scalar.
    pub fn log_prob(&self, genome: &ArchGenome) -> Result<Tensor> {
        if genome.choices.len() != self.slot_sizes.len() {
            return Err(Error::invalid("controller", "genome length differs from the slot count"));
        }
        let (_, lps) = self.rollout(|s, _| Ok(genome.choices[s]))?;
        let mut total = lps[0].clone();
        for t in &lps[1..] {
            total = total.add(t)?;
        }
        Ok(total)
    }

    /// One ascent step on `(reward - baseline) Σ log π`, then the baseline
    /// moves toward `reward`. The first reward seeds the baseline. Returns
    /// the advantage used.
    pub fn reinforce_update(&mut self, genome: &ArchGenome, reward: f64) -> Result<f64> {
        if !reward.is_finite() {
            return Err(Error::invalid("reinforce", format!("reward {reward}")));
        }
        let base = *self.baseline.get_or_insert(reward);
        let adv = reward - base;
        if adv != 0.0 {
            let params = self.parameters();
            zero_grads(&params);
            // descend on -adv * log π, i.e. ascend on the objective
            self.log_prob(genome)?.mul_scalar(-adv).backward()?;
            sgd_step(&params, self.cfg.lr);
            zero_grads(&params);
        }
        self.baseline = Some(base + (1.0 - self.cfg.baseline_decay) * adv);
        self.updates += 1;
        Ok(adv)
    }

    pub fn updates(&self) -> usize {
        self.updates
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rewards() {
        assert_eq!(reward(0.05), 20.0);
        assert_eq!(reward(1.0), 1.0);
        assert_eq!(reward(0.0), 1e8);
        assert_eq!(reward(f64::NAN), 0.0);
    }

    #[test]
    fn initial_policy_uniform_and_normalized() {
        let c = Controller::new(&[3, 5, 2], ControllerConfig::default(), 0).unwrap();
        let p = c.probabilities(&ArchGenome::new(vec![1, 4, 0])).unwrap();
        for v in &p {
            assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(v.iter().all(|x| (x - 1.0 / v.len() as f64).abs() < 1e-12));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (g, lp) = c.sample(&mut rng).unwrap();
        assert_eq!(lp.len(), 3);
        assert_eq!(c.decode_argmax().unwrap(), c.decode_argmax().unwrap());
        assert!((c.log_prob(&g).unwrap().item() - lp.iter().sum::<f64>()).abs() < 1e-12);
    }

    #[test]
    fn ascent_raises_sampled_probability() {
        let mut c = Controller::new(&[3, 3], ControllerConfig::default(), 4).unwrap();
        let g = ArchGenome::new(vec![2, 1]);
        assert_eq!(c.reinforce_update(&g, 1.0).unwrap(), 0.0);
        let before = c.log_prob(&g).unwrap().item();
        // baseline is 1.0, so this is a positive advantage
        c.reinforce_update(&g, 2.0).unwrap();
        assert!(c.log_prob(&g).unwrap().item() > before);
    }

    #[test]
    fn constant_rewards_leave_policy() {
        let mut c = Controller::new(&[4], ControllerConfig::default(), 9).unwrap();
        let before: Vec<Vec<f64>> = c.parameters().iter().map(|p| p.to_vec()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..10 {
            let (g, _) = c.sample(&mut rng).unwrap();
            c.reinforce_update(&g, 0.7).unwrap();
        }
        let after: Vec<Vec<f64>> = c.parameters().iter().map(|p| p.to_vec()).collect();
        assert_eq!(before, after);
    }
}
