//! Bayesian workflow engine for hierarchical negative-binomial regression on
//! software-project defect data.
//!
//! The pipeline runs prior predictive checks, fits with a No-U-Turn
//! sampler, checks convergence and calibration, runs posterior predictive
//! checks, compares models by PSIS-LOO and answers scenario questions with
//! the fitted posterior.

pub mod analyze;
pub mod checks;
pub mod compare;
pub mod data;
pub mod error;
pub mod model;
pub mod sampler;
pub mod stats;
pub mod synthetic;

pub use analyze::Scenario;
pub use data::{Dataset, PreparedRow, RawRecord};
pub use error::{Error, Result};
pub use model::{ModelSpec, Observations, ObservedData, Params, PriorConfig, Variant};
pub use sampler::{Diagnostics, Draws, SamplerConfig, Verdict};
