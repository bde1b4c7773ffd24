//! Command-line orchestration: run configuration, manifests, pipeline stages,
//! sweeps and plot-data export.

pub mod commands;
pub mod config;
pub mod error;
pub mod export;
pub mod manifest;
pub mod stages;
pub mod sweep;

pub use commands::run_command;
pub use config::RunConfig;
pub use error::CliError;
