//! Batch front-end for the homogenization pipeline: config parsing, the stage
//! runners behind each subcommand, and the artifact writers.

pub mod config;
pub mod output;
pub mod pipeline;

use thiserror::Error;
use trihom_core::TrihomError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: TrihomError,
    },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    /// Process exit status: 2 config, 3 solver failure, 4 validation failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            // rejected inputs that only show up once the cell is built
            CliError::Stage {
                source:
                    TrihomError::InvalidShape(_)
                    | TrihomError::InvalidGrid(_)
                    | TrihomError::InvalidParameter(_)
                    | TrihomError::InvalidCoefficient(_)
                    | TrihomError::NonPositiveInput(_)
                    | TrihomError::DisconnectedSubdomain(_),
                ..
            } => 2,
            CliError::Stage { .. } | CliError::Io(_) => 3,
            CliError::Validation(_) => 4,
        }
    }
}

/// Attach a stage name to a core error.
pub fn stage(name: &'static str) -> impl Fn(TrihomError) -> CliError {
    move |source| CliError::Stage { stage: name, source }
}
