//! Experiments, validation suite, run configuration, checkpoints and output
//! files on top of `ymlattice-core`.
//!
//! Every run is described by one TOML file ([`config::RunConfig`]); its
//! SHA-256 is stamped into each manifest and checkpoint. Chains draw from
//! counter-based streams keyed by `(seed, stream)`, so a single-threaded run
//! is reproducible byte for byte.

pub mod chain;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod experiments;
pub mod output;
pub mod validate;

/// Errors surfaced to the command line, each mapped to an exit code.
#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("checks failed: {0}")]
    CheckFailure(String),
    #[error(transparent)]
    Core(#[from] ymlattice_core::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("output error: {0}")]
    Output(String),
}

impl AppError {
    /// 1 for failed checks and runtime failures, 2 for configuration and
    /// checkpoint problems.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) | Self::Checkpoint(_) => 2,
            _ => 1,
        }
    }
}

impl From<csv::Error> for AppError {
    fn from(e: csv::Error) -> Self {
        Self::Output(e.to_string())
    }
}

impl From<serde_json::Error> for AppError {
    fn from(e: serde_json::Error) -> Self {
        Self::Output(e.to_string())
    }
}
