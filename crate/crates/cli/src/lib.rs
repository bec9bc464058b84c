//! Library side of the `hstkit` command-line tool.

pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;
pub mod gradsuite;
pub mod provenance;

pub use config::{Experiment, InitFrom, Precision};
pub use dataset::{png_files, DatasetIndex, IndexEntry};
pub use error::{CliError, Result};
pub use gradsuite::CheckRow;
