use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty word has no trigrams")]
    EmptyWord,

    #[error("cannot build a vocabulary from an empty corpus")]
    EmptyCorpus,

    #[error("{path}:{line}: {reason}")]
    Malformed {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("need {needed} distinct clicked titles to sample from, found {available}")]
    PoolTooSmall { needed: usize, available: usize },

    #[error("empty sequence cannot be embedded")]
    EmptySequence,

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("zero-norm embedding (norm {0:e})")]
    ZeroNorm(f64),

    #[error("instance {index}: {source}")]
    Instance {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("query {index}: {source}")]
    Query {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("training diverged at epoch {epoch}, batch {batch}: {reason}")]
    Diverged {
        epoch: usize,
        batch: usize,
        reason: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("bad checkpoint magic")]
    BadMagic,

    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),

    #[error("checkpoint content hash mismatch")]
    HashMismatch,

    #[error("checkpoint shape error: {0}")]
    Shape(String),

    #[error("checkpoint header: {0}")]
    Header(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn at_instance(self, index: usize) -> Self {
        Error::Instance {
            index,
            source: Box::new(self),
        }
    }

    pub(crate) fn at_query(self, index: usize) -> Self {
        Error::Query {
            index,
            source: Box::new(self),
        }
    }
}
