//! File formats, the training driver and the `tdam` command line.

pub mod bagio;
pub mod checkpoint;
pub mod cli;
pub mod commands;
pub mod error;
pub mod manifest;
pub mod output;
pub mod runconfig;

pub use error::{CliError, Result};
