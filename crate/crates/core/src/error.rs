use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("missing required column `{0}`")]
    MissingColumn(String),
    #[error("timestamps decrease at row {row} (t = {t})")]
    NonMonotoneTime { row: usize, t: f64 },
    #[error("malformed row {row}: {detail}")]
    MalformedRow { row: usize, detail: String },
    #[error("annotation schema violation: {0}")]
    SchemaViolation(String),
    #[error("annotation order violation: {0}")]
    OrderViolation(String),
    #[error("annotation contains no segments")]
    EmptyWalk,
    #[error("no usable straight-segment data for {0}")]
    NoUsableData(String),
    #[error("slice of {len} samples is shorter than the window of {timesteps}")]
    SliceTooShort { len: usize, timesteps: usize },
    #[error("need at least {needed} examples, got {got}")]
    TooFewExamples { needed: usize, got: usize },
    #[error("unknown participant `{0}`")]
    UnknownParticipant(String),
    #[error("leave-one-out needs at least two participants")]
    SingleParticipant,
    #[error("protocol needs at least {needed} participants, got {got}")]
    TooFewParticipants { needed: usize, got: usize },
    #[error("training set is empty")]
    EmptyTrainSet,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite activation in {0}")]
    NonFiniteActivation(&'static str),
    #[error("cache does not belong to this model or batch")]
    StaleCache,
    #[error("training diverged at step {step}")]
    DivergedTraining { step: u64 },
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("segment has no ground-truth steps")]
    EmptyGroundTruth,
    #[error("no segment with ground-truth steps to score")]
    NoValidSegments,
    #[error("invalid gait profile: {0}")]
    InvalidProfile(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("nothing to report")]
    EmptyReport,
    #[error("i/o failure on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("{path}: {source}")]
    InFile {
        path: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Attach the file the error came from.
    pub fn in_file(self, path: impl AsRef<std::path::Path>) -> Self {
        match self {
            e @ (Error::Io { .. } | Error::InFile { .. }) => e,
            e => Error::InFile {
                path: path.as_ref().display().to_string(),
                source: Box::new(e),
            },
        }
    }

    /// True for errors caused by the input data or configuration rather than
    /// by the environment or by training numerics.
    pub fn is_data_error(&self) -> bool {
        if let Error::InFile { source, .. } = self {
            return source.is_data_error();
        }
        !matches!(
            self,
            Error::Io { .. } | Error::DivergedTraining { .. } | Error::NonFiniteActivation(_)
        )
    }

    pub fn is_divergence(&self) -> bool {
        if let Error::InFile { source, .. } = self {
            return source.is_divergence();
        }
        matches!(
            self,
            Error::DivergedTraining { .. } | Error::NonFiniteActivation(_)
        )
    }
}
