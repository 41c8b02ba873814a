use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{source_name}:{line}: {message}")]
    Parse {
        source_name: String,
        line: usize,
        message: String,
    },

    #[error("treebank invariant violated in sentence {sentence_id}: {message}")]
    Treebank {
        sentence_id: String,
        message: String,
    },

    #[error("embedding store format error: {0}")]
    Format(String),

    #[error("layer {requested} not in store (available: {available:?})")]
    UnknownLayer { requested: u32, available: Vec<u32> },

    #[error("sentence ordinal {ordinal} out of range (store holds {count})")]
    OrdinalOutOfRange { ordinal: usize, count: usize },

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    Dimension {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("alignment mismatch in sentence {sentence_id}: {message}")]
    Alignment {
        sentence_id: String,
        message: String,
    },

    #[error("non-finite training loss at step {step} (loss = {loss}); check the learning rate or feature scale")]
    NonFiniteLoss { step: u64, loss: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("I/O error on {path}: {source}")]
    PathIo {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn path_io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::PathIo {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by numerical failure rather than bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::NonFiniteLoss { .. })
    }
}
