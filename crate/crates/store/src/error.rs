use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid key: {0}")]
    InvalidKey(String),

    #[error("value of {0} bytes exceeds the 16 MiB limit")]
    ValueTooLarge(usize),

    #[error("segment sealed")]
    SegmentSealed,

    #[error("segment gone: {0}")]
    SegmentGone(String),

    #[error("corrupt file {path}: {reason}")]
    Corrupt { path: PathBuf, reason: String },

    #[error("catalog contention after {0} attempts")]
    CatalogContention(usize),

    #[error("root holds no segments")]
    RootHoldsNoSegments,

    #[error("invalid node path {0:?}")]
    InvalidNodePath(String),

    #[error("compaction lease busy (held by {0})")]
    LeaseBusy(String),

    #[error("compaction lease expired")]
    LeaseExpired,

    #[error("store closed")]
    Closed,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("cache capacity {requested} exceeds budget {budget}")]
    CacheOverBudget { requested: u64, budget: u64 },

    #[error("concurrent tasks share input segment {0}")]
    OverlappingTasks(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("json error on {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn corrupt(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Corrupt { path: path.into(), reason: reason.into() }
    }

    /// True when the failure means a segment was retired underneath the caller.
    pub fn is_segment_gone(&self) -> bool {
        matches!(self, Error::SegmentGone(_))
    }
}

/// Attach a path to an `io::Result`, mapping `NotFound` on segment files to
/// [`Error::SegmentGone`] when requested.
pub(crate) trait IoContext<T> {
    fn at(self, path: &std::path::Path) -> Result<T>;
}

impl<T> IoContext<T> for io::Result<T> {
    fn at(self, path: &std::path::Path) -> Result<T> {
        self.map_err(|e| Error::io(path, e))
    }
}
