//! File formats, run configuration and subcommands around
//! `deepercluster-core`.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;
pub mod formats;

pub use error::{CliError, Result};
