use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Reads a whole file, naming it in the error.
pub(crate) fn read_file(path: &std::path::Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|err| Error::Read {
        path: path.to_path_buf(),
        err,
    })
}

pub(crate) fn read_text(path: &std::path::Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|err| Error::Read {
        path: path.to_path_buf(),
        err,
    })
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{0}: no triples found")]
    EmptyGraph(PathBuf),

    #[error("graph is already augmented")]
    AlreadyAugmented,

    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch for `{name}`: expected {expected:?}, got {actual:?}")]
    Shape {
        name: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("dimension mismatch: {0} vs {1}")]
    Dimension(usize, usize),

    #[error("unknown parameter `{0}`")]
    UnknownParam(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("could not find a negative sample for triple ({0}, {1}, {2}) after 100 attempts")]
    NegativeSampling(usize, usize, usize),

    #[error("unknown entity `{0}`")]
    UnknownEntity(String),

    #[error("index {index} out of range for {what} of size {len}")]
    Index {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("{}: {err}", .path.display())]
    Read { path: PathBuf, err: std::io::Error },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
