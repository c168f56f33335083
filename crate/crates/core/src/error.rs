use std::path::PathBuf;

/// Errors raised anywhere in the scoring pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An input violated a type invariant or an operation precondition.
    #[error("validation error: {0}")]
    Validation(String),

    /// A text record could not be parsed.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// Training produced a non-finite loss.
    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A module error annotated with the pipeline stage and input it came from.
    #[error("{stage} ({locus}): {source}")]
    Stage {
        stage: &'static str,
        locus: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Wraps the error with the pipeline stage and input locus.
    pub fn at(self, stage: &'static str, locus: impl Into<String>) -> Self {
        Error::Stage {
            stage,
            locus: locus.into(),
            source: Box::new(self),
        }
    }

    /// The innermost error, skipping stage annotations.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }

    /// Short machine-readable name of the error kind.
    pub fn kind_name(&self) -> &'static str {
        match self.root() {
            Error::Validation(_) => "ValidationError",
            Error::Parse { .. } => "ParseError",
            Error::Divergence(_) => "TrainingDivergence",
            Error::Io { .. } => "IoError",
            Error::Stage { .. } => unreachable!("root() strips stages"),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
