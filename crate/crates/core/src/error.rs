use std::io;

use thiserror::Error;

use crate::deptree::TreeError;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors produced by the toolkit.
///
/// Each variant falls into one of three families (see [`Error::category`]):
/// data problems in the inputs, numeric faults during computation, and
/// misuse of the API or configuration.
#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("block {block}: {source}")]
    Tree {
        block: usize,
        #[source]
        source: TreeError,
    },

    #[error("cannot reconstruct tree at word `{word}`: {msg}")]
    Reconstruct { word: String, msg: String },

    #[error("{0}")]
    Data(String),

    #[error("numeric fault: {0}")]
    Numeric(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("internal ordering fault: {0}")]
    Ordering(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: io::Error,
    },
}

/// Coarse error family, used by the command-line driver to pick exit codes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Category {
    Usage,
    Data,
    Numeric,
}

impl Error {
    pub fn category(&self) -> Category {
        match self {
            Error::Numeric(_) => Category::Numeric,
            Error::Config(_) => Category::Usage,
            _ => Category::Data,
        }
    }

    pub(crate) fn io(context: impl Into<String>, source: io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }
}
