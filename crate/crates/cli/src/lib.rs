//! Command-line pipeline and read-only JSON service for diffusion tree
//! inference runs.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;
pub mod service;

pub use config::RunConfig;
pub use error::{CliError, Result};
pub use manifest::{LoadedRun, RunManifest};
