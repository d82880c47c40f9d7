//! Config parsing, experiment dispatch and artifact writing for the `sli` tool.

pub mod commands;
pub mod config;
pub mod output;

pub use commands::{dispatch, Command};
pub use config::{parse_config, parse_config_str, ConfigError, ExperimentConfig};
