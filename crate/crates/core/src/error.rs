use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid label schema: {0}")]
    InvalidSchema(String),
    #[error("combination {found:?} has length {len}, expected {expected}")]
    CombinationLength {
        found: String,
        len: usize,
        expected: usize,
    },
    #[error("invalid character {ch:?} in combination {found:?}")]
    CombinationChar { found: String, ch: char },
    #[error("probability {value} at position {index} is outside [0, 1]")]
    ProbabilityRange { index: usize, value: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("sample {0:?} is not in the candidate pool")]
    NotInCandidatePool(String),
    #[error("sample {0:?} appears more than once")]
    DuplicateId(String),
    #[error("unknown sample {0:?}")]
    UnknownSample(String),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },
    #[error("cannot normalize a vector whose entries sum to zero")]
    ZeroSum,
    #[error("sample {0:?} has no ground truth")]
    MissingTruth(String),
    #[error("task {0:?} is already pending")]
    AlreadyPending(String),
    #[error("task {0:?} has already been finalized")]
    AlreadyFinalized(String),
    #[error("annotation queue still has {0} pending tasks")]
    QueueNotEmpty(usize),
    #[error("{what} is undefined: {reason}")]
    Undefined {
        what: &'static str,
        reason: &'static str,
    },
    #[error("invalid split: {0}")]
    InvalidSplit(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
