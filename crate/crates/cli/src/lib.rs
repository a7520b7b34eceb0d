//! Config-driven front end: assembles problems, runs flows and property
//! suites, and writes CSV/JSON artifacts.

pub mod config;
pub mod runner;
pub mod suites;

pub use config::{ConfigError, RawConfig};
pub use runner::{cmd_oracle, cmd_run, cmd_verify, CliError, RunConfig, RunReport, VerifyReport};
