//! Configuration, data files, reports and the command-line surface of the
//! membrane-in-the-middle cooling toolkit.

pub mod analysis;
pub mod commands;
pub mod config;
pub mod csvio;
pub mod report;
pub mod units;

pub use commands::{main_with, run, Cli, CliError, Command};
pub use config::{Config, ConfigError, Experiment};
pub use report::{Report, Section};
