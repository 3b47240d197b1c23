use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    #[default]
    RelativeL2,
    Mae,
}

impl Metric {
    pub fn eval(self, pred: &[f64], truth: &[f64]) -> Result<f64> {
        match self {
            Metric::RelativeL2 => relative_l2(pred, truth),
            Metric::Mae => mae(pred, truth),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::RelativeL2 => "relative_l2",
            Metric::Mae => "mae",
        })
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relative_l2" => Ok(Metric::RelativeL2),
            "mae" => Ok(Metric::Mae),
            _ => Err(Error::Config(format!("unknown metric {s:?}"))),
        }
    }
}

fn same_len(op: &'static str, pred: &[f64], truth: &[f64]) -> Result<()> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::invalid(op, format!("lengths {} and {}", pred.len(), truth.len())));
    }
    Ok(())
}

/// `‖pred - truth‖₂ / ‖truth‖₂` over every point of every sample.
pub fn relative_l2(pred: &[f64], truth: &[f64]) -> Result<f64> {
    same_len("relative_l2", pred, truth)?;
    let num: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum();
    let den: f64 = truth.iter().map(|t| t * t).sum();
    if den == 0.0 {
        return Err(Error::invalid("relative_l2", "reference has zero norm"));
    }
    Ok((num / den).sqrt())
}

/// Mean absolute deviation.
pub fn mae(pred: &[f64], truth: &[f64]) -> Result<f64> {
    same_len("mae", pred, truth)?;
    Ok(pred.iter().zip(truth).map(|(p, t)| (p - t).abs()).sum::<f64>() / pred.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hand_values() {
        assert_eq!(relative_l2(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(relative_l2(&[2.0, -4.0, 6.0], &[1.0, -2.0, 3.0]).unwrap(), 1.0);
        assert!((relative_l2(&[1.0, 0.0], &[0.0, 1.0]).unwrap() - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(mae(&[1.0, 3.0], &[0.0, 0.0]).unwrap(), 2.0);
        assert_eq!(mae(&[0.5], &[0.5]).unwrap(), 0.0);
        assert!(relative_l2(&[1.0], &[0.0]).is_err());
        assert!(mae(&[1.0], &[0.0, 1.0]).is_err());
    }

    fn pairs() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (1usize..40).prop_flat_map(|n| (prop::collection::vec(-10.0..10.0f64, n), prop::collection::vec(-10.0..10.0f64, n)))
    }

    proptest! {
        #[test]
        fn relative_l2_scale_covariant((p, t) in pairs(), c in prop_oneof![-100.0..-0.01f64, 0.01..100.0f64]) {
            prop_assume!(t.iter().any(|v| v.abs() > 1e-3));
            let a = relative_l2(&p, &t).unwrap();
            let ps: Vec<f64> = p.iter().map(|v| v * c).collect();
            let ts: Vec<f64> = t.iter().map(|v| v * c).collect();
            let b = relative_l2(&ps, &ts).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
        }

        #[test]
        fn mae_translation_covariant((p, t) in pairs(), c in -100.0..100.0f64) {
            let a = mae(&p, &t).unwrap();
            let ps: Vec<f64> = p.iter().map(|v| v + c).collect();
            let ts: Vec<f64> = t.iter().map(|v| v + c).collect();
            let b = mae(&ps, &ts).unwrap();
            prop_assert!((a - b).abs() <= 1e-11 * a.max(1.0) + 1e-12);
        }
    }
}
