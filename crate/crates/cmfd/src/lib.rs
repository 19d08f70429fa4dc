//! Std companion to `cmfd-core`: image and model files, configuration,
//! thread pools, reports and the `cmfd` command line.

pub mod cli;
pub mod config;
pub mod error;
pub mod exec;
pub mod image_io;
pub mod model_io;
pub mod report;

pub use error::{Error, Result};
