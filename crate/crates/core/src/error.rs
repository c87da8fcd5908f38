use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("malformed event stream: {0}")]
    MalformedStream(String),

    #[error("invalid scene: {0}")]
    InvalidScene(String),

    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),

    #[error("training diverged at iteration {iteration}: total loss {loss}")]
    TrainingDiverged { iteration: usize, loss: f64 },

    #[error("evaluation mode `{mode}` unavailable: {reason}")]
    ModeUnavailable { mode: String, reason: String },

    #[error("missing file: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("{}:{line}: {msg}", path.display())]
    Parse { path: PathBuf, line: usize, msg: String },

    #[error("view `{view}`: expected {expected} poses, found {found}")]
    PoseCountMismatch {
        view: String,
        expected: usize,
        found: usize,
    },

    #[error("{}:{line}: events not sorted by timestamp ({tau} after {previous})", path.display())]
    UnsortedEvents {
        path: PathBuf,
        line: usize,
        tau: f64,
        previous: f64,
    },

    #[error("{}:{line}: timestamp {tau} outside exposure window ({t_start}, {t_end}]", path.display())]
    OutOfWindow {
        path: PathBuf,
        line: usize,
        tau: f64,
        t_start: f64,
        t_end: f64,
    },

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),

    #[error("manifest error: {0}")]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
