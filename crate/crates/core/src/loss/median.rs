//! Median early stopping of unpromising trials.

use serde::{Deserialize, Serialize};

use super::genome::LossGenome;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialStatus {
    Running,
    Completed,
    Stopped,
    Diverged,
    Failed,
}

/// One trial of the loss search. `trace[t]` is the validation metric after
/// epoch `t + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub id: usize,
    pub candidate: usize,
    pub genome: LossGenome,
    pub status: TrialStatus,
    pub trace: Vec<f64>,
    /// Best validation metric reached; infinite when the run produced none.
    pub best: f64,
}

impl TrialRecord {
    pub fn best_so_far(&self, epochs: usize) -> f64 {
        self.trace[..epochs.min(self.trace.len())]
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    /// Mean metric over the first `epochs` epochs, or over the whole trace
    /// when it is shorter.
    pub fn running_average(&self, epochs: usize) -> Option<f64> {
        let t = &self.trace[..epochs.min(self.trace.len())];
        (!t.is_empty()).then(|| t.iter().sum::<f64>() / t.len() as f64)
    }
}

/// First epoch at which stopping is allowed: 10% of the run, at least one.
pub fn grace_epochs(total_epochs: usize) -> usize {
    total_epochs.div_ceil(10).max(1)
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// True when the trial's best metric after `epoch` epochs is strictly worse
/// than the median of the completed trials' running averages at that epoch.
/// Never stops inside the grace period or without completed trials.
pub fn median_stop_check(trial: &TrialRecord, completed: &[TrialRecord], epoch: usize, grace: usize) -> bool {
    if epoch < grace || epoch == 0 {
        return false;
    }
    let mut avgs: Vec<f64> = completed
        .iter()
        .filter(|c| c.status == TrialStatus::Completed)
        .filter_map(|c| c.running_average(epoch))
        .filter(|v| v.is_finite())
        .collect();
    if avgs.is_empty() {
        return false;
    }
    trial.best_so_far(epoch) > median(&mut avgs)
}
