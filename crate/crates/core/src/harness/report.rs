//! Report files: a TOML summary and CSV traces.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::metrics::Metric;
use super::train::{TrainStatus, TrainTrace};
use crate::arch::{ArchSearchResult, SpaceKind, Strategy};
use crate::error::{Error, Result};
use crate::loss::{LossGenome, TrialRecord};
use crate::pde::PdeKind;

pub const REPORT_VERSION: u32 = 1;
pub const REPORT_FILE: &str = "report.toml";
pub const CURVES_FILE: &str = "curves.csv";
pub const CURVES_HEADER: [&str; 3] = ["epoch", "train_loss", "val_metric"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitMetrics {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub format_version: u32,
    pub dataset: PdeKind,
    pub metric: Metric,
    pub metrics: SplitMetrics,
    pub status: TrainStatus,
    pub epochs_run: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub best_epoch: Option<usize>,
    pub wall_clock_s: f64,
    pub loss_id: String,
    pub loss: LossGenome,
    pub space: SpaceKind,
    pub strategy: Strategy,
    pub arch_id: String,
    pub arch: Vec<usize>,
    pub train_loss: Vec<f64>,
    pub val_metric: Vec<f64>,
}

impl MetricsReport {
    pub fn check(&self) -> Result<()> {
        let m = &self.metrics;
        if [m.train, m.validation, m.test].iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::invalid("report", format!("negative or undefined metric in {m:?}")));
        }
        if self.train_loss.len() != self.epochs_run || self.val_metric.len() != self.epochs_run {
            return Err(Error::invalid("report", "trace length differs from epochs run"));
        }
        Ok(())
    }

    pub fn trace(&self) -> TrainTrace {
        TrainTrace {
            train_loss: self.train_loss.clone(),
            val_metric: self.val_metric.clone(),
            status: self.status,
            best_epoch: self.best_epoch,
            best_val: self.metrics.validation,
        }
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        detail: e.to_string(),
    }
}

pub(crate) fn write_toml<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = toml::to_string(value).map_err(|e| Error::Config(e.to_string()))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_toml<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })
}

/// Writes `report.toml` and `curves.csv` into `dir`. Returns both paths.
pub fn report_emit(report: &MetricsReport, dir: &Path) -> Result<Vec<PathBuf>> {
    report.check()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let rpath = dir.join(REPORT_FILE);
    write_toml(&rpath, report)?;
    let cpath = dir.join(CURVES_FILE);
    let mut w = csv::Writer::from_path(&cpath).map_err(|e| csv_err(&cpath, e))?;
    w.write_record(CURVES_HEADER).map_err(|e| csv_err(&cpath, e))?;
    for (e, (l, v)) in report.train_loss.iter().zip(&report.val_metric).enumerate() {
        w.serialize((e, l, v)).map_err(|e| csv_err(&cpath, e))?;
    }
    w.flush().map_err(|e| Error::io(&cpath, e))?;
    Ok(vec![rpath, cpath])
}

pub fn read_report(dir: &Path) -> Result<MetricsReport> {
    let r: MetricsReport = read_toml(&dir.join(REPORT_FILE))?;
    r.check()?;
    Ok(r)
}

/// Rows of `curves.csv` as `(epoch, train_loss, val_metric)`.
pub fn read_curves(path: &Path) -> Result<Vec<(usize, f64, f64)>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header = r.headers().map_err(|e| csv_err(path, e))?;
    if header.iter().ne(CURVES_HEADER) {
        return Err(Error::Format {
            path: path.to_path_buf(),
            detail: format!("unexpected header {header:?}"),
        });
    }
    r.deserialize().map(|row| row.map_err(|e| csv_err(path, e))).collect()
}

#[derive(Serialize)]
struct LossRow<'a> {
    id: usize,
    candidate: usize,
    status: String,
    epochs: usize,
    best: f64,
    genome: &'a str,
}

/// One row per loss-search trial.
pub fn write_loss_ledger(path: &Path, trials: &[TrialRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for t in trials {
        let g = t.genome.to_string();
        w.serialize(LossRow {
            id: t.id,
            candidate: t.candidate,
            status: format!("{:?}", t.status).to_lowercase(),
            epochs: t.trace.len(),
            best: t.best,
            genome: &g,
        })
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Serialize)]
struct ArchRow {
    id: usize,
    error: f64,
    reward: f64,
    failed: bool,
    genome: String,
}

/// One row per architecture trial.
pub fn write_arch_ledger(path: &Path, result: &ArchSearchResult) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for t in &result.trials {
        w.serialize(ArchRow {
            id: t.id,
            error: t.error,
            reward: t.reward,
            failed: t.failed,
            genome: t.genome.to_string(),
        })
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// A row of the search-space comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub dataset: PdeKind,
    pub search_space: SpaceKind,
    pub strategy: Strategy,
    pub validation_error: f64,
    pub test_error: f64,
    pub architecture: String,
}

pub fn write_comparison(path: &Path, rows: &[ComparisonRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_comparison(path: &Path) -> Result<Vec<ComparisonRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| csv_err(path, e))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(epochs: usize) -> MetricsReport {
        MetricsReport {
            format_version: REPORT_VERSION,
            dataset: PdeKind::Poisson,
            metric: Metric::RelativeL2,
            metrics: SplitMetrics {
                train: 0.01,
                validation: 0.1 / 3.0,
                test: 0.04,
            },
            status: TrainStatus::Completed,
            epochs_run: epochs,
            best_epoch: Some(1),
            wall_clock_s: 1.25,
            loss_id: LossGenome::vanilla().to_string(),
            loss: LossGenome::vanilla(),
            space: SpaceKind::UnetEntire,
            strategy: Strategy::Darts,
            arch_id: "enc0a=conv3x3".into(),
            arch: vec![0, 1, 2],
            train_loss: (0..epochs).map(|e| 1.0 / (e as f64 + 3.0)).collect(),
            val_metric: (0..epochs).map(|e| (e as f64).sqrt() / 7.0).collect(),
        }
    }

    #[test]
    fn round_trip_and_curves() {
        let dir = tempfile::tempdir().unwrap();
        let r = sample(7);
        report_emit(&r, dir.path()).unwrap();
        assert_eq!(read_report(dir.path()).unwrap(), r);
        let rows = read_curves(&dir.path().join(CURVES_FILE)).unwrap();
        assert_eq!(rows.len(), 7);
        assert_eq!(rows[3], (3, r.train_loss[3], r.val_metric[3]));
        let text = fs::read_to_string(dir.path().join(CURVES_FILE)).unwrap();
        assert!(text.starts_with("epoch,train_loss,val_metric\n"));
    }

    #[test]
    fn rejects_inconsistent_reports() {
        let mut r = sample(3);
        r.epochs_run = 4;
        assert!(r.check().is_err());
        let mut r = sample(3);
        r.metrics.test = -1.0;
        assert!(r.check().is_err());
    }
}
