use std::path::PathBuf;

/// Errors raised by the pipeline and its building blocks.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Inconsistent or out-of-range configuration / shape mismatch.
    #[error("configuration error: {0}")]
    Config(String),
    /// An input outside an operation's mathematical domain.
    #[error("domain error: {0}")]
    Domain(String),
    /// A caller broke an operation's documented precondition.
    #[error("precondition violated: {0}")]
    Precondition(String),
    /// A pipeline stage failed; wraps the underlying error with the stage name.
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("checkpoint format error: {0}")]
    Checkpoint(String),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Attach a stage name, leaving already-attributed errors untouched.
    pub fn in_stage(self, stage: &'static str) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                stage,
                source: Box::new(e),
            },
        }
    }

    /// True for errors caused by invalid configuration or inputs rather than
    /// runtime failures. The CLI maps these to exit code 2.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Config(_) | Error::Domain(_) | Error::Precondition(_) | Error::Json(_) => true,
            Error::Stage { source, .. } => source.is_validation(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
