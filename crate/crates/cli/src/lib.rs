//! Config-driven pipeline and command-line plumbing for desknmt.

pub mod artifacts;
pub mod config;
pub mod error;
pub mod manifest;
pub mod pipeline;

pub use config::{parse_config, validate_config, ConfigError, PipelineConfig};
pub use error::CliError;
pub use manifest::RunManifest;
pub use pipeline::{run_pipeline, PipelineReport};
