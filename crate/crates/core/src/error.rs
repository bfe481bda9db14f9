use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("forward cache does not belong to this network state")]
    StaleCache,

    #[error("zero-norm vector in {0}")]
    ZeroNorm(&'static str),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("vector is not on the probability simplex (sum = {sum}, min = {min})")]
    NotSimplex { sum: f64, min: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("label {label} out of range 1..={classes}")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("required word {0:?} not found in embedding table")]
    MissingWord(String),

    #[error("duplicate word {word:?} at line {line}")]
    DuplicateWord { word: String, line: usize },

    #[error("malformed input at line {line}: {message}")]
    Malformed { line: usize, message: String },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("class {0} has no members")]
    EmptyClass(usize),

    #[error("class {class} has {members} member(s), need at least 2 to stratify")]
    CannotStratify { class: usize, members: usize },

    #[error("transport solver did not converge after {0} pivots")]
    SolverStalled(usize),

    #[error("cannot access {}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
