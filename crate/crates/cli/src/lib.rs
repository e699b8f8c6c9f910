//! Library side of the `lipwave` command: run configuration and the pipeline commands.

pub mod commands;
pub mod config;

pub use config::RunConfig;
