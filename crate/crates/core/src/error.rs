use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("probability {0} outside [0, 1)")]
    InvalidProbability(f64),

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),

    #[error("backward called on an empty tape")]
    EmptyTape,

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("unknown category {0}")]
    UnknownCategory(usize),

    #[error("sequence length {len} exceeds maximum {max}")]
    LengthExceedsMax { len: usize, max: usize },

    #[error("length {len} outside the decodable range [{min}, {max}]")]
    LengthOutOfRange { len: usize, min: usize, max: usize },

    #[error("unknown token {word:?}{}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    UnknownToken { word: String, line: Option<usize> },

    #[error("words missing from the lexicon: {0:?}")]
    UntaggedWords(Vec<String>),

    #[error("token id {id} outside vocabulary of size {size}")]
    IndexOutOfVocab { id: usize, size: usize },

    #[error("sentence is empty")]
    EmptySentence,

    #[error("not a probability distribution (sum = {0})")]
    NotADistribution(f64),

    #[error("corpus has no training examples")]
    EmptyCorpus,

    #[error("loss diverged at epoch {epoch}")]
    DivergedLoss { epoch: usize },

    #[error("missing file {0}")]
    MissingFile(PathBuf),

    #[error("unknown split {0:?}")]
    UnknownSplit(String),

    #[error("invalid corpus spec: {0}")]
    InvalidSpec(String),

    #[error("metric input is empty")]
    EmptyInput,

    #[error("configuration error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            return Error::MissingFile(path);
        }
        Error::Io { path, source }
    }

    /// Usage and configuration problems map to exit code 2, everything else to 1.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidSpec(_) => 2,
            _ => 1,
        }
    }
}
