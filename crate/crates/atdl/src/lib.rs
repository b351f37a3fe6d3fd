//! File formats, experiment runner and command line around `atdl-core`.

pub mod config;
pub mod error;
pub mod experiment;
pub mod io;
pub mod model_file;
pub mod report;

pub use error::{AppError, Result};
