//! Command-line front end: run configuration files, bitwise-stable
//! checkpoints, CSV training logs, and PGM image export.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod csvlog;
pub mod error;
pub mod pgm;

pub use error::{CliError, Result};
