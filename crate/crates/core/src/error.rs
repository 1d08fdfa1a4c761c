use std::path::PathBuf;

use thiserror::Error;

use crate::vocab::TokenId;

pub type Result<T, E = ClapsError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum ClapsError {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("duplicate token id {0}")]
    DuplicateId(TokenId),

    #[error("search space is empty: {0}")]
    EmptySpace(String),

    #[error("unknown token id {0}")]
    UnknownToken(TokenId),

    #[error("no offset configured for example {0}")]
    UnknownExample(usize),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("template error: {0}")]
    Template(String),

    #[error("sampling error: class {class} has {available} records, {requested} requested")]
    Sampling {
        class: usize,
        available: usize,
        requested: usize,
    },

    #[error("data error: {0}")]
    Data(String),

    #[error("oracle unreachable after {attempts} attempts: {message}")]
    OracleUnreachable { attempts: u32, message: String },

    #[error("oracle protocol error: {0}")]
    Protocol(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<ClapsError>,
    },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl ClapsError {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        ClapsError::Io {
            context: context.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        ClapsError::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    /// Process exit code for the CLI: 2 config, 3 oracle, 4 data.
    pub fn exit_code(&self) -> i32 {
        match self {
            ClapsError::Config(_) | ClapsError::Precondition(_) => 2,
            ClapsError::OracleUnreachable { .. } | ClapsError::Protocol(_) => 3,
            ClapsError::Stage { source, .. } => source.exit_code(),
            _ => 4,
        }
    }
}
