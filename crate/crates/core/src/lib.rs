//! Audits and enforces multicalibration and multiaccuracy of binary
//! probability predictors over collections of intersecting demographic
//! groups, and trains small MLP predictors with Mixup and four Fair-Mixup
//! fairness penalties.

pub mod audit;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod fairpen;
pub mod groups;
pub mod matrix;
pub mod mixup;
pub mod nn;
pub mod postprocess;
pub mod rng;
pub mod trainer;
pub(crate) mod textio;

pub use error::{Error, Result};
