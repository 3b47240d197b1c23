//! Dense `f64` tensors with a dynamic gradient tape.
//!
//! The operation set is deliberately small: what convolutional PDE
//! surrogates, their physics losses and a recurrent search controller need.
//! Broadcasting is limited to one-element operands.

pub mod error;
pub mod gradcheck;
pub mod io;
pub mod ops;
pub mod optim;
pub mod tensor;

pub use error::{Result, TensorError};
pub use gradcheck::{gradcheck, GradcheckReport};
pub use ops::conv::{conv2d, depthwise_conv2d, depthwise_separable_conv2d, PaddingSpec};
pub use ops::elementwise::gelu_scalar;
pub use ops::norm::group_norm;
pub use ops::pool::{avgpool2d, maxpool2d};
pub use ops::resample::{resize, upsample, UpsampleMode};
pub use ops::shape::{concat, softmax_values, GatherEntry};
pub use ops::sparse::CsrMatrix;
pub use optim::{adam_step, sgd_step, AdamState};
pub use tensor::{is_grad_enabled, no_grad, zero_grads, BackwardStats, Tensor};
