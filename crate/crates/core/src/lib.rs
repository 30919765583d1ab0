//! Uncertainty-gated stochastic sequential modeling of multivariate clinical
//! time series.
//!
//! The crate trains a variational recurrent network that imputes missing
//! values with per-value uncertainty, propagates that uncertainty through a
//! modified gated recurrent cell, and predicts in-hospital mortality from the
//! final hidden state. Training is joint and end-to-end over a composite
//! loss (sequence ELBO, forward/backward consistency, masked imputation
//! error, focal classification).
//!
//! Module map:
//! - [`graph`] — reverse-mode autodiff over `f64` matrices (the numerical core)
//! - [`data_model`] — samples, masking semantics, time intervals, container I/O
//! - [`ingestion`] — PhysioNet 2012 loader, gridded loader, synthetic generator, preprocessing
//! - [`vrnn_core`] — prior / inference / generation networks and latent sampling
//! - [`imputation`] — temporal decay, feature correlation, combination, uncertainty
//! - [`gru_u`] — uncertainty-gated attention and the GRU-U cell
//! - [`training`] — losses, the unroll, the optimizer, cross-validation, checkpoints
//! - [`evaluation`] — AUC / AUPRC / masked MAE / uncertainty-error correlation
//! - [`baselines`] — zero- and mean-impute GRU baselines

pub mod baselines;
pub mod data_model;
pub mod error;
pub mod evaluation;
pub mod graph;
pub mod gru_u;
pub mod imputation;
pub mod ingestion;
pub mod params;
pub mod training;
pub mod vrnn_core;

pub use error::{Result, UgssError};
