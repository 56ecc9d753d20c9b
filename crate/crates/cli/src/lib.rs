//! Command-line front end for `gccakit`: matrix files, experiment
//! configuration, recording and model directories, and the subcommands.

pub mod commands;
pub mod config;
pub mod error;
pub mod matfile;
pub mod store;

pub use commands::{run, Command};
pub use config::ExperimentConfig;
pub use error::CliError;
