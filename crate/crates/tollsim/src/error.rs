use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{file}:{line}: {msg}")]
    Parse {
        file: String,
        line: usize,
        msg: String,
    },

    #[error("network error: {0}")]
    Network(String),

    #[error("no path between origin {origin} and destination {destination}")]
    Disconnected { origin: u64, destination: u64 },

    #[error("missing choice set for OD pair ({0}, {1})")]
    MissingPathSet(u64, u64),

    #[error("guidance/toll coverage gap: {0}")]
    CoverageGap(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("infeasible constraint configuration: {0}")]
    InfeasibleConstraints(String),

    #[error("individual {0} has no objective value")]
    Unevaluated(usize),

    #[error("evaluation of strategy {index} failed: {source}")]
    Evaluation {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn parse(file: impl Into<String>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            file: file.into(),
            line,
            msg: msg.into(),
        }
    }
}
