//! Error type shared across the crate.
//!
//! Variants are grouped by how a caller should react: configuration and
//! schema problems are user-fixable, shape mismatches are programming
//! errors at the call site, and numeric failures mean a run diverged.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration or arguments (bad fps, empty inputs, ...).
    #[error("config: {0}")]
    Config(String),

    /// Tensor/sequence dimensions do not match what an operation expects.
    #[error("shape: {0}")]
    Shape(String),

    /// A data file failed schema validation.
    #[error("schema: {file}:{line}: {message}")]
    Schema {
        file: String,
        line: usize,
        message: String,
    },

    /// Numerical failure: divergence, non-finite activations, NaN loss.
    #[error("numeric: {0}")]
    Numeric(String),

    /// Filesystem or serialization failure.
    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("io: {0}")]
    Csv(#[from] csv::Error),

    #[error("config: {0}")]
    TomlDe(#[from] toml::de::Error),

    #[error("config: {0}")]
    TomlSer(#[from] toml::ser::Error),

    #[error("io: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    /// Stable process exit code for CLI use: 1 I/O, 2 usage/config, 3 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Schema { .. } | Error::TomlDe(_) | Error::TomlSer(_) => 2,
            Error::Shape(_) => 2,
            Error::Numeric(_) => 3,
            Error::Io(_) | Error::Csv(_) | Error::Json(_) => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
