//! Experiment orchestration: metrics, training, trial runners, the
//! two-stage pipeline and report files.

pub mod config;
pub mod metrics;
pub mod pipeline;
pub mod report;
pub mod runners;
pub mod split;
pub mod train;

pub use metrics::{mae, relative_l2, Metric};
pub use split::{split, Samples, SearchData, SplitTag, Test, Train, Validation};
pub use train::{fresh_network, test_metric, train, validation_metric, TrainConfig, TrainStatus, TrainTrace, Trainer};
pub use config::{ArchStage, ExperimentConfig, LossStage};
pub use pipeline::{
    arch_stage, compare_spaces, final_stage, load_model, loss_stage, prepare, rerun_from_manifest, save_model, two_stage_pipeline,
    ArchChoice, LossChoice, Prepared, RunManifest, Seeds,
};
pub use report::{read_report, report_emit, ComparisonRow, MetricsReport, SplitMetrics};
pub use runners::{ArchEvalRunner, LossTrialRunner, PdeOneShot};
