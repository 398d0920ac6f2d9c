//! Learning click-through-rate models from noisy aggregated data.
//!
//! The pipeline starts from granular categorical rows (features plus click
//! and sale labels), publishes them as differentially private contingency
//! tables over single features and feature pairs, and trains logistic
//! models against those tables instead of the rows. The crate covers the
//! whole loop: synthetic data generation, aggregation and calibrated
//! Gaussian noise, aggregate-only training with gradient rescaling, CTR
//! enrichment of small labeled sets, fake granular data as a fallback, a
//! granular skyline baseline, and evaluation with normalized cross-entropy
//! and paired bootstrap comparisons.

pub mod agg_logistic;
pub mod aggregation;
pub mod data;
pub mod encoding;
pub mod enrichment;
pub mod error;
pub mod evaluation;
pub mod kv;
mod optim;
mod rng;
pub mod skyline;

pub use error::{Error, Result};
