//! Configuration, file formats and the capture pipeline behind the
//! `capcli` command.

pub mod artifacts;
pub mod config;
pub mod error;
pub mod eval;
pub mod pipeline;

pub use config::PipelineConfig;
pub use error::{CliError, CliResult};
