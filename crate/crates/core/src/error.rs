use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: String,
        expected: usize,
        found: usize,
    },

    #[error("covariate {covariate} row {row}: code {code} outside 0..{categories}")]
    CategoryOutOfRange {
        covariate: usize,
        row: usize,
        code: i64,
        categories: usize,
    },

    #[error("poisson response requires an `offset` column")]
    MissingOffsets,

    #[error("offsets are only meaningful for a poisson response")]
    UnexpectedOffsets,

    #[error("offset at row {row} is {value}; offsets must be strictly positive")]
    NonPositiveOffset { row: usize, value: f64 },

    #[error("row {row}: poisson response {value} is not a nonnegative integer")]
    InvalidCount { row: usize, value: f64 },

    #[error("adjacency is not symmetric: {from} lists {to} but not the reverse")]
    AsymmetricAdjacency { from: usize, to: usize },

    #[error("self-loop on area {0}")]
    SelfLoop(usize),

    #[error("area index {index} out of range for {n} areas")]
    IndexOutOfRange { index: usize, n: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid hyperparameter {name}: {reason}")]
    InvalidHyperparameter { name: String, reason: String },

    #[error("{path}:{line}: {message}")]
    Config {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("numerical failure in {component}: {message}")]
    Numerical { component: String, message: String },

    #[error("chain aborted at iteration {iteration} in {component}: {source}")]
    ChainAborted {
        iteration: usize,
        component: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn numerical(component: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Numerical {
            component: component.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn is_numerical(&self) -> bool {
        match self {
            Error::Numerical { .. } => true,
            Error::ChainAborted { source, .. } => source.is_numerical(),
            _ => false,
        }
    }

    /// Process exit code: 1 for input problems, 2 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        if self.is_numerical() {
            2
        } else {
            1
        }
    }

    /// Short machine-readable category used in error records.
    pub fn kind(&self) -> &'static str {
        if self.is_numerical() {
            "numerical"
        } else {
            match self {
                Error::Io { .. } => "io",
                Error::Config { .. } => "config",
                _ => "input",
            }
        }
    }
}
