//! Quadratic exponential binary models for clustered binary data.
//!
//! The crate covers the full estimation pipeline:
//!
//! * [`model`] – panels, parameter vectors, interaction packing, working
//!   correlations and the logit link.
//! * [`exact`] – enumeration over all `2^m` configurations: normalizing
//!   constant, pmf, moments, exact and Gibbs samplers, Newton MLE.
//! * [`design`] – expansion of each model family into the stacked
//!   node-wise logistic design.
//! * [`gee`] – pooled GLM (GGLM) and GEE fits with naive and sandwich
//!   covariances, QIC and raw estimating functions.
//! * [`selection`] – QIC backward elimination of interaction terms.
//! * [`simlab`] – data generators and the Monte Carlo replication engine.

pub mod design;
pub mod error;
pub mod exact;
pub mod fixtures;
pub mod gee;
pub mod model;
pub mod rng;
pub mod selection;
pub mod simlab;

pub use error::{Error, Result};
