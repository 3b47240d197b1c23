//! Physics-informed CNN surrogates for parametric PDEs, with a loss-function
//! search (Bayesian optimization, median stopping) followed by an
//! architecture search (REINFORCE, ENAS, DARTS).

pub mod arch;
pub mod error;
pub mod harness;
pub mod loss;
pub mod data;
pub mod pde;
pub mod rng;

pub use error::{Error, Result};
