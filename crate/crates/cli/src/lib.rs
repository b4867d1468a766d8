//! Experiment runner for the sequential MCMC filter: TOML run
//! configurations, named presets and the `simulate`, `filter`, `sweep-s`
//! and `probe-delta` commands with their CSV/JSON artifacts.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

pub use commands::Invocation;
pub use config::RunConfig;
pub use error::{CliError, Result};
