//! Differentially private synthetic tabular data by relaxed adaptive
//! projection, with sigmoid relaxations of threshold queries and
//! inverse-temperature annealing.
//!
//! The pipeline: declare a [`schema::Schema`], generate query workloads with
//! [`queries`], fit with [`engine::rappp_fit`] under a zCDP budget tracked by
//! [`privacy::PrivacyAccountant`], and score the output with
//! [`evaluation::workload_error`].

pub mod ablation;
pub mod cli;
pub mod demo;
pub mod engine;
pub mod error;
pub mod evaluation;
pub mod privacy;
pub mod projection;
pub mod queries;
pub mod rng;
pub mod schema;

pub use engine::{rappp_fit, Engine, EngineConfig, EngineState, PhaseSpec};
pub use error::{Error, Result};
pub use schema::{DiscreteDataset, RelaxedDataset, Schema};
