//! Unsupervised debiasing laboratory.
//!
//! Three phases: train a bias-capturing classifier, discover bias subgroups by
//! clustering its latent space, then retrain with the EnD regularizer using
//! the discovered pseudo-labels. The [`biasness`] module holds the closed-form
//! model used to quantify how much a classifier relies on the bias.

pub mod bias_predictor;
pub mod biasness;
pub mod data;
pub mod end_reg;
pub mod error;
pub mod model;
pub mod pipeline;

pub use error::{Error, Result};
