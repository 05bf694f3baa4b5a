//! Contamination detection and membership-inference scoring.
//!
//! The crate is organised the way a scoring run flows: [`model`] holds
//! instances and labels, [`ngram`] provides the reference language model,
//! [`metrics`] turns log-probability records into scores, [`similarity`]
//! covers direct overlap checks, [`eval`] computes AUC-based reports,
//! [`ingest`] moves data in and out, and [`scenario`] runs canned
//! end-to-end experiments.

pub mod error;
pub mod model;
pub mod ngram;
pub mod metrics;
pub mod similarity;
pub mod eval;
pub mod ingest;
pub mod scoring;
pub mod scenario;

pub use error::{Error, Result};
