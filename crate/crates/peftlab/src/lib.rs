//! Runner, file formats and command-line front end for `peftlab-core`.
//!
//! Reads TOML run configurations, trains and benchmarks methods, writes
//! metrics CSVs and binary checkpoints, and exposes the `peftlab` CLI.

pub mod bench;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod error;
pub mod experiment;
pub mod gradcheck;
pub mod metrics;

pub use error::{AppError, AppResult};
