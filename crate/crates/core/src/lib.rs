//! Desk-scale machine-unlearning lab: a synthetic QA corpus, a small
//! fixed-window language model with exact gradients, token-wise loss
//! reweighting criteria, unlearning objectives, evaluation metrics and an
//! experiment harness.

pub mod corpus;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod objectives;
pub mod reweight;
pub mod rng;

pub use error::{Error, Result};
