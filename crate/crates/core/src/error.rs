use std::io;
use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    /// Malformed input file or record. `line` is 1-based when known.
    #[error("{}", format_parse(.what, *.line, .msg))]
    Parse {
        what: String,
        line: Option<usize>,
        msg: String,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// A quantity is mathematically undefined for the given input
    /// (constant series, zero-norm vector, too few points).
    #[error("undefined: {0}")]
    Undefined(String),

    #[error("invalid argument: {0}")]
    Invalid(String),
}

fn format_parse(what: &str, line: Option<usize>, msg: &str) -> String {
    match line {
        Some(l) => format!("{what}, line {l}: {msg}"),
        None => format!("{what}: {msg}"),
    }
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(what: impl Into<String>, line: Option<usize>, msg: impl Into<String>) -> Self {
        Error::Parse {
            what: what.into(),
            line,
            msg: msg.into(),
        }
    }

    /// Coarse classification used to pick process exit codes.
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Io { .. } | Error::Parse { .. } => ErrorKind::Data,
            Error::Shape(_) | Error::NonFinite(_) | Error::Undefined(_) => ErrorKind::Numeric,
            Error::Invalid(_) => ErrorKind::Usage,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    Numeric,
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
