use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = DsuError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum DsuError {
    /// Operand dimensions disagree with what an operation requires.
    #[error("dimension error: {0}")]
    Shape(String),

    /// Invalid geometry or hyperparameters.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("bad magic in {path}: expected {expected:?}, found {found:?}")]
    BadMagic { path: PathBuf, expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported container version {0}")]
    BadVersion(u32),

    #[error("truncated payload in {path}: {detail}")]
    Truncated { path: PathBuf, detail: String },

    /// A tensor read from disk does not match the active profile.
    #[error("shape mismatch for {name}: expected {expected:?}, found {found:?}")]
    ProfileShape { name: String, expected: Vec<usize>, found: Vec<usize> },

    #[error("missing tensor {0}")]
    MissingTensor(String),

    #[error("malformed PGM header in {path}: {detail}")]
    PgmHeader { path: PathBuf, detail: String },

    #[error("unsupported PGM maxval {maxval} in {path} (expected 255)")]
    PgmMaxval { path: PathBuf, maxval: u32 },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// Dataset pairing or layout problems.
    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("gradient check failed: {0}")]
    GradCheck(String),

    #[error("config file {path}, line {line}: {detail}")]
    ConfigFile { path: PathBuf, line: usize, detail: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl DsuError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io { path: path.into(), source }
    }
}
