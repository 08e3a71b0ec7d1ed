use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid or inconsistent configuration.
    #[error("config error: {0}")]
    Config(String),

    /// Input outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape mismatch: {context}: {left:?} vs {right:?}")]
    Shape {
        context: String,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    /// Non-finite values or a failed numerical step.
    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("ray {ray} failed at bathymetry segment {segment}: {reason}")]
    RayStep {
        ray: usize,
        segment: usize,
        reason: String,
    },

    #[error("checksum mismatch in {}: stored {stored:08x}, computed {computed:08x}", path.display())]
    Crc {
        path: PathBuf,
        stored: u32,
        computed: u32,
    },

    #[error("malformed container {}: {reason}", path.display())]
    Format { path: PathBuf, reason: String },

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    /// A sample failed; `spec` is the offending scenario as JSON.
    #[error("scenario {spec} failed: {source}")]
    Scenario {
        spec: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn shape(context: impl Into<String>, left: &[usize], right: &[usize]) -> Self {
        Error::Shape {
            context: context.into(),
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Json(_) => 2,
            Error::Domain(_) | Error::Shape { .. } | Error::Numeric(_) | Error::RayStep { .. } => 3,
            Error::Crc { .. } | Error::Format { .. } | Error::Io { .. } => 4,
            Error::Scenario { source, .. } => source.exit_code(),
        }
    }
}
