//! Hierarchical Bayesian source localization for EEG with conditionally
//! exponential priors, randomized multiresolution scanning, an analytic
//! three-shell head model, and accuracy/focality metrics.

pub mod error;
pub mod forward;
pub mod geometry;
pub mod hyperprior;
pub mod io;
pub mod metrics;
pub mod cep;
pub mod model;
pub mod ramus;

pub use error::{Error, Result};
