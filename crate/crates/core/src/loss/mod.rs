//! Operator-infused loss functions and their Bayesian-optimization search.

pub mod assemble;
pub mod bo;
pub mod genome;
pub mod gp;
pub mod median;
pub mod search;
pub mod weights;

pub use assemble::{gradient_enhanced_terms, LossBatch, LossEvaluator, LossParts};
pub use bo::{bo_suggest, expected_improvement};
pub use genome::{LossGenome, LossSpace, LossSpaceConfig, WeightOp};
pub use gp::GpSurrogate;
pub use median::{median_stop_check, TrialRecord, TrialStatus};
pub use search::{run_loss_search, LossSearchConfig, LossSearchResult, TrialOutcome, TrialRunner};
pub use weights::{
    topn_mask, weight_update_normalize, weight_update_pointwise_grad, weight_update_topn, Aggregation, WeightState,
};
