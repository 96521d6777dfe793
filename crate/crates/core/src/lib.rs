//! Token-level quantile forecasting of end-of-sentence affect scores.
//!
//! A small quantile-regression head reads per-token context features and
//! predicts ten quantiles of the score a sentence will *end* with. The
//! predicted trajectories drive three downstream uses:
//!
//! - [`calib`]: calibration of the predicted quantiles against held-out scores.
//! - [`analyze`]: variance peaks (intensifiers) and pivot transitions ("but").
//! - [`generate`]: steering an autoregressive language model toward the lower
//!   or upper α-tail of a prompt's predicted distribution, and [`inferalpha`]
//!   for the inverse problem of fitting α to observed text.
//!
//! The [`corpus`] module provides a synthetic scored corpus whose conditional
//! end-score distributions can be enumerated exactly, plus the `qaff-v1`
//! interchange format for externally exported hidden states. [`embed`] holds
//! the language-model abstraction, an add-k n-gram model and the windowed
//! context featurizer.

pub mod analyze;
pub mod calib;
pub mod corpus;
pub mod embed;
pub mod error;
pub mod generate;
pub mod inferalpha;
pub mod quantile;
pub mod stats;
pub mod testbed;

pub use error::{Error, Result};
