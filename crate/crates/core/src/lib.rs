//! Individual-level prediction stability auditing.
//!
//! A learning pipeline is retrained `B` times under controlled perturbations
//! (training-data resampling, or a fixed training set with varying random
//! seeds). Each individual in a fixed test set then has `B` predicted risks,
//! summarized by the empirical prediction interval width (ePIW) and the
//! empirical decision flip rate (eDFR).

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod harness;
pub mod math;
pub mod metrics;
pub mod models;
pub mod optim;
pub mod seed;

pub use error::{Error, Result};
