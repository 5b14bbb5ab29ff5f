use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("sample length exceeds recording ({sample_len} > {duration})")]
    SampleExceedsRecording { sample_len: usize, duration: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid recording: {0}")]
    InvalidRecording(String),

    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("truncated payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("window does not tile sample (window {window}, sample length {sample_len})")]
    WindowDoesNotTile { window: usize, sample_len: usize },

    #[error("degenerate covariance: {0}")]
    DegenerateCovariance(String),

    #[error("geometry exceeds positional table: {tokens} tokens > {max_tokens}")]
    TooManyTokens { tokens: usize, max_tokens: usize },

    #[error("timestep {t} out of range 1..={t_max}")]
    TimestepOutOfRange { t: usize, t_max: usize },

    #[error("training divergence: {0}")]
    TrainingDivergence(String),

    #[error("non-finite state during sampling at timestep {0}")]
    SamplingDivergence(usize),

    #[error("degenerate label set: {0}")]
    DegenerateLabels(String),

    #[error("label {label} outside [0, {n_classes})")]
    LabelOutOfRange { label: usize, n_classes: usize },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures that stem from numerics rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::TrainingDivergence(_) | Error::SamplingDivergence(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
