use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A parameter or argument outside its admissible range.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Malformed or inconsistent input data.
    #[error("data error: {0}")]
    Data(String),

    /// Malformed input at a known line of a file.
    #[error("{source_name}:{line}: {msg}")]
    DataAt {
        source_name: String,
        line: u64,
        msg: String,
    },

    /// Configuration schema violation, located by JSON pointer.
    #[error("config error at '{pointer}': {msg}")]
    Config { pointer: String, msg: String },

    #[error("missing artifact {}: run `{command}` first", path.display())]
    MissingArtifact { path: PathBuf, command: String },

    /// Optimizer non-convergence, divergence, or non-finite values.
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit status for this error: 1 usage/config, 2 data, 3 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidParameter(_) | Error::Config { .. } | Error::MissingArtifact { .. } => 1,
            Error::Data(_) | Error::DataAt { .. } | Error::Io { .. } | Error::Csv(_) | Error::Json(_) => 2,
            Error::Numerical(_) => 3,
        }
    }
}

macro_rules! ensure_param {
    ($cond:expr, $($arg:tt)+) => {
        if !$cond {
            return Err($crate::error::Error::InvalidParameter(format!($($arg)+)));
        }
    };
}
pub(crate) use ensure_param;
