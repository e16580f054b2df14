//! Cox proportional-hazards regression for interval-censored failure times
//! collected under (generalized) case-cohort sampling.
//!
//! The cumulative baseline hazard is modelled by a monotone Bernstein
//! polynomial sieve. Three estimators are produced from one cohort:
//!
//! - the inverse-probability-weighted (IPW) sieve estimator built from the
//!   case-cohort sample only,
//! - a working Cox model on cheap/auxiliary covariates, fitted both to the
//!   weighted case-cohort sample and to the full cohort,
//! - the update estimator, which corrects the IPW estimate with the
//!   (asymptotically mean-zero) difference of the two working-model fits.
//!
//! The joint covariance needed by the update is estimated with a weighted
//! (multiplier) bootstrap using Exp(1) weights.

// comparisons are written so that NaN fails them
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod error;
pub mod estimator;
pub mod likelihood;
pub mod optim;
pub mod rng;
pub mod sieve;
pub mod simulation;
pub mod update;

pub use data::{CohortDataset, CovariateNames, IntervalObservation, SamplingDesign};
pub use error::{Error, Result};
pub use estimator::{fit, fit_main_ipw, fit_working_full, fit_working_ipw, FitConfig, FitResult};
pub use likelihood::{CoxParams, ModelSpec};
pub use sieve::{MonotoneCoefficients, SieveConfig, UnconstrainedCoefficients};
pub use update::{BootstrapConfig, CovarianceBlocks, UpdateResult};
