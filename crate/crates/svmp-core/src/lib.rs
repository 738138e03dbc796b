//! Stochastic variational message passing for Gaussian bilinear matrix
//! factorization.
//!
//! The library factorizes a sparse ratings matrix with a fully factorized
//! Gaussian approximation, updated either by exact coordinate ascent or by
//! stochastic natural-gradient steps built from child subsamples. Small
//! subsample sizes combined with unit-scale initial steps can push the
//! state beyond numerical recovery; the run loops log the evidence lower
//! bound against a rating-access counter and flag that divergence, and the
//! `diagnostics` module carries the independent oracles (finite
//! differences, Monte Carlo covariance, exhaustive subset enumeration)
//! used to validate the closed-form updates.

pub mod bmf;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod expfam;
pub mod optimizer;
pub mod plot;

pub use bmf::{FactorAddress, FactorState, Side};
pub use data::{SparseRatings, SyntheticTruth};
pub use error::{Error, Result};
pub use expfam::{FisherMatrix, GaussianNatural, Moments};
pub use optimizer::{
    Algorithm, RunConfig, RunLog, RunLogEntry, ScheduleParams, UpdateOption,
};
