use std::path::PathBuf;

/// Errors produced by the super-resolution pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("ground plane fit failed: best inlier fraction {fraction:.3} below required {required:.3}")]
    PlaneFitFailure { fraction: f64, required: f64 },

    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },

    #[error("degenerate variance v_t = {0} (the score is undefined at t = 0)")]
    DegenerateVariance(f64),

    #[error("nearest-neighbour reference cloud is empty")]
    EmptyReference,

    #[error("point cloud is empty")]
    EmptyCloud,

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("backward pass called without a matching forward context")]
    MissingForwardContext,

    #[error("training diverged at iteration {iteration}: loss = {loss}")]
    Divergence { iteration: usize, loss: f64 },

    #[error("checkpoint mismatch: {0}")]
    CheckpointMismatch(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn format(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Format {
            what,
            detail: detail.into(),
        }
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidConfig(msg.into())
    }

    /// Attaches a file name to an error.
    pub fn at(self, path: impl Into<PathBuf>) -> Self {
        Error::File {
            path: path.into(),
            source: Box::new(self),
        }
    }

    /// The innermost error, with any file context stripped.
    pub fn root(&self) -> &Error {
        match self {
            Error::File { source, .. } => source.root(),
            other => other,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
