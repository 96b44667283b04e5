use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("failed to parse {what}: {message}")]
    Parse { what: String, message: String },

    #[error("invalid pigment `{entry}` field `{field}`: {message}")]
    InvalidPigment {
        entry: String,
        field: &'static str,
        message: String,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("bad file format: {0}")]
    Format(String),

    #[error("no pigment reaches similarity threshold {threshold} for cluster colour {rgb:?} (best similarity {best_alpha:.4})")]
    NoMatchingPigment {
        rgb: [f64; 3],
        threshold: f64,
        best_alpha: f64,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("image error: {0}")]
    Image(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(what: impl Into<String>, err: serde_json::Error) -> Self {
        Error::Parse {
            what: what.into(),
            message: err.to_string(),
        }
    }

    /// True for data/format problems (as opposed to numerical failures).
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Numerical(_))
    }
}
