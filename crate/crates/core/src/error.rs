//! Error type shared by all pipeline stages.
//!
//! Variants are grouped by the kind of failure so that callers (notably the
//! CLI) can map them onto stable exit codes without string-matching.

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid or inconsistent configuration values.
    #[error("config error: {0}")]
    Config(String),

    /// A file could not be parsed; carries file and line for diagnostics.
    #[error("parse error in {path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    /// Structurally inconsistent input (count mismatches, mixed frames, ...).
    #[error("structural error: {0}")]
    Structural(String),

    /// A geometric estimate could not be computed (degenerate input).
    #[error("estimation error: {0}")]
    Estimation(String),

    /// Contradictory or incomplete lateral arrangement of candidate lines.
    #[error("topology error: {0}")]
    Topology(String),

    /// Export or document validation failure.
    #[error("export error: {0}")]
    Export(String),

    /// Input uses a feature this implementation deliberately rejects.
    #[error("unsupported feature: {0}")]
    Unsupported(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable process exit code for this error category.
    ///
    /// 2 config, 3 data, 4 topology, 5 export/validation.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Parse { .. } | Error::Structural(_) | Error::Estimation(_) | Error::Io { .. } => 3,
            Error::Topology(_) => 4,
            Error::Export(_) | Error::Unsupported(_) => 5,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
