//! Experiment runner for `zvonkin-core`: TOML configs, CSV and JSON outputs,
//! per-run manifests, and the acceptance suite.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod acceptance;
pub mod commands;
pub mod config;
pub mod error;
pub mod output;
pub mod setup;

pub use commands::{run, Command};
pub use config::RunConfig;
pub use error::{HResult, HarnessError};
