//! Batch front end: configuration, signal file I/O, pipeline
//! orchestration, and report serialization.

pub mod config;
pub mod error;
pub mod io;
pub mod pipeline;
pub mod report;
pub mod synth;

pub use error::{CliError, CliResult};
