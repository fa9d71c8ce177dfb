//! Active-learning experiments driven by a learned loss predictor.
//!
//! A small prediction head is attached to a target model and jointly trained
//! to rank per-sample losses; its scores drive pool-based acquisition. The
//! usual baselines (random, softmax entropy, k-center core-set) and the
//! metrics to compare them on equal footing live here too.

pub mod error;
pub mod lossnet;
pub mod models;
pub mod nn;

pub use error::{Error, Result};
