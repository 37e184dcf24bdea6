use std::path::PathBuf;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum GraspError {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("dataset is empty after filtering")]
    EmptyDataset,

    #[error("cannot partition an empty population")]
    EmptyPopulation,

    #[error("cannot sample {requested} negatives for user {user}: only {available} candidate items")]
    SamplingInfeasible {
        user: usize,
        requested: usize,
        available: usize,
    },

    #[error("format error at {location}: {msg}")]
    Format { location: String, msg: String },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("id {id} out of range for {what} (size {size})")]
    Lookup { what: &'static str, id: usize, size: usize },

    #[error("non-finite loss at epoch {epoch}, batch {batch}: {loss}")]
    NonFinite { epoch: usize, batch: usize, loss: f64 },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("incompatible checkpoint: {0}")]
    Compatibility(String),

    #[error("missing file {}: {hint}", path.display())]
    MissingFile { path: PathBuf, hint: String },

    #[error("refusing to overwrite existing output {} (pass --force)", .0.display())]
    OutputExists(PathBuf),

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl GraspError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        GraspError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(location: impl Into<String>, msg: impl Into<String>) -> Self {
        GraspError::Format {
            location: location.into(),
            msg: msg.into(),
        }
    }

    /// Process exit code: 2 usage, 3 data/format, 4 numeric, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            GraspError::Argument(_) | GraspError::OutputExists(_) => 2,
            GraspError::Parse { .. }
            | GraspError::EmptyDataset
            | GraspError::EmptyPopulation
            | GraspError::SamplingInfeasible { .. }
            | GraspError::Format { .. }
            | GraspError::Lookup { .. }
            | GraspError::Protocol(_)
            | GraspError::Compatibility(_)
            | GraspError::MissingFile { .. } => 3,
            GraspError::NonFinite { .. } => 4,
            GraspError::Io { .. } => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, GraspError>;
