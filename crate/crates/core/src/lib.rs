//! Correlation-adjusted ISPD indices: the Betoidal distribution, the
//! department-size correlation model, its likelihoods and estimators, and a
//! simulation harness for comparing indices.

pub mod betoidal;
pub mod corrmodel;
pub mod error;
pub mod estimation;
pub mod indices;
pub mod likelihoods;
pub mod simgen;
pub mod simstudy;
pub mod specfun;

pub use corrmodel::{CorrelationModelKind, ModelTheta, SizeContext};
pub use error::{Error, Result};
pub use estimation::{fit, FitConfig, FitResult};
pub use likelihoods::{Cohort, DeptRecord, LikelihoodKind, Observation};
