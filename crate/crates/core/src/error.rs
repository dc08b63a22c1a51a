use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the simulator.
#[derive(Debug, Error)]
pub enum SglError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config parse error at line {line}: {message}")]
    ConfigParse { line: usize, message: String },

    #[error("config value out of range for `{key}`: {message}")]
    ConfigRange { key: String, message: String },

    #[error("checkpoint format error: {0}")]
    CheckpointFormat(String),

    #[error("CFL condition still violated after {refinements} step halvings (max |u| = {max_speed})")]
    CflExhausted { refinements: u32, max_speed: f64 },

    #[error("non-finite value detected in {0}")]
    NonFinite(String),

    #[error("numerical invariant violated: {0}")]
    Invariant(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("ledger is not aligned with the report series: {0}")]
    Misaligned(String),
}

impl SglError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        SglError::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the numerics (blow-up, CFL exhaustion) as
    /// opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            SglError::CflExhausted { .. } | SglError::NonFinite(_) | SglError::Invariant(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, SglError>;
