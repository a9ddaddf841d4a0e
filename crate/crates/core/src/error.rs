use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: malformed record: {reason}")]
    MalformedRecord { line: usize, reason: String },

    #[error("image not found: {}", .0.display())]
    MissingImage(PathBuf),

    #[error("unknown adapter `{0}`")]
    UnknownAdapter(String),

    #[error("source layout mismatch: {0}")]
    SourceLayoutMismatch(String),

    #[error("unknown dataset `{0}`")]
    UnknownDataset(String),

    #[error("box {box_:?} lies outside the {width}x{height} image")]
    BoxOutOfBounds {
        box_: [u32; 4],
        width: u32,
        height: u32,
    },

    #[error("failed to decode image {}: {reason}", path.display())]
    ImageDecodeFailure { path: PathBuf, reason: String },

    #[error(transparent)]
    Endpoint(#[from] EndpointError),

    #[error("empty input")]
    EmptyInput,

    #[error("ground-truth list is empty")]
    EmptyTruths,

    #[error("answer is empty")]
    EmptyAnswer,

    #[error("answer already contains a link token")]
    EmbeddedLinkToken,

    #[error("query is already augmented with the link instruction")]
    AlreadyAugmented,

    #[error("negative answer equals the positive answer")]
    NegEqualsPositive,

    #[error("cannot produce three distinct perturbations of `{0}`")]
    PerturbationImpossible(String),

    #[error("malformed link tokens at char {offset}: {reason}")]
    MalformedLinks { offset: usize, reason: String },

    #[error("response references unknown pair `{0}`")]
    UnknownPairReference(String),

    #[error("exchange for {task} task must use the {expected} image")]
    ImageTaskMismatch {
        task: &'static str,
        expected: &'static str,
    },

    #[error("io error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

/// Failure talking to a model endpoint.
#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum EndpointError {
    /// Worth retrying: connection reset, 429, 5xx.
    #[error("transient endpoint failure: {0}")]
    Transient(String),

    #[error("endpoint timed out")]
    Timeout,

    #[error("authentication rejected: {0}")]
    AuthFailure(String),

    /// Retries exhausted, or a non-retryable protocol error.
    #[error("endpoint failure: {0}")]
    Failure(String),
}

impl EndpointError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, EndpointError::Transient(_) | EndpointError::Timeout)
    }
}
