use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("PDB parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("structure contains no parsable residues")]
    EmptyStructure,

    /// A caller violated an operation's preconditions (shapes, lengths, ranges).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("superposition needs at least 3 points, got {0}")]
    Degenerate(usize),

    #[error("interface is empty: {0}")]
    UndefinedInterface(String),

    #[error(transparent)]
    Weights(#[from] WeightsError),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("non-finite loss at epoch {epoch}, step {step}; last good checkpoint: {checkpoint:?}")]
    NonFiniteLoss {
        epoch: usize,
        step: usize,
        checkpoint: Option<PathBuf>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

/// Failures while reading a weights file. Each corruption mode is distinct so
/// callers can tell a stale file from a damaged one.
#[derive(Debug, Error)]
pub enum WeightsError {
    #[error("bad magic bytes {found:?}, expected \"CNWT\"")]
    BadMagic { found: [u8; 4] },

    #[error("unsupported weights format version {found} (this build reads {supported})")]
    UnsupportedVersion { found: u16, supported: u16 },

    #[error("malformed manifest: {0}")]
    Manifest(String),

    #[error("tensor `{name}` has shape {found:?}, expected {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("tensor `{0}` missing from weights file")]
    MissingTensor(String),

    #[error("truncated payload: need {needed} bytes, file has {available}")]
    Truncated { needed: usize, available: usize },

    #[error("tensor `{0}` contains non-finite values")]
    NonFinite(String),
}
