//! Write segments (single-owner append logs) and immutable sorted segments.

mod immutable;
mod write;

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use immutable::{
    flush, write_sorted, ImmutableSegment, SegmentIter, SegmentReader, FOOTER_LEN, FORMAT_VERSION,
    INDEX_INTERVAL, SEGMENT_MAGIC,
};
pub use write::{SealedSegment, WriteSegment};
pub(crate) use immutable::sync_dir;

pub const SEGMENT_EXT: &str = "seg";
pub const BLOOM_EXT: &str = "bloom";
pub const LIVE_EXT: &str = "live";
pub const TMP_SUFFIX: &str = ".tmp";

/// `<writer>-<seq>`; writer ids are restricted to `[A-Za-z0-9_]` so the
/// separator is unambiguous.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SegmentId(String);

impl SegmentId {
    pub fn new(writer: &str, seq: u64) -> Result<Self> {
        validate_writer_id(writer)?;
        Ok(SegmentId(format!("{writer}-{seq}")))
    }

    pub fn parse(s: &str) -> Option<Self> {
        let (writer, seq) = s.rsplit_once('-')?;
        validate_writer_id(writer).ok()?;
        seq.parse::<u64>().ok()?;
        Some(SegmentId(s.to_string()))
    }

    pub fn writer(&self) -> &str {
        self.0.rsplit_once('-').map(|(w, _)| w).unwrap_or(&self.0)
    }

    pub fn seq(&self) -> u64 {
        self.0.rsplit_once('-').and_then(|(_, s)| s.parse().ok()).unwrap_or(0)
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn segment_file(&self) -> String {
        format!("{}.{SEGMENT_EXT}", self.0)
    }

    pub fn bloom_file(&self) -> String {
        format!("{}.{BLOOM_EXT}", self.0)
    }

    pub fn live_file(&self) -> String {
        format!("{}.{LIVE_EXT}", self.0)
    }
}

impl fmt::Display for SegmentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

pub fn validate_writer_id(writer: &str) -> Result<()> {
    let ok = !writer.is_empty()
        && writer.len() <= 64
        && writer.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'_');
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("writer id {writer:?} must match [A-Za-z0-9_]{{1,64}}")))
    }
}

pub(crate) fn tmp_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(TMP_SUFFIX);
    PathBuf::from(s)
}

/// Highest sequence number used by `writer` among files in `dir`, counting
/// live logs, segments and leftover temp files.
pub fn max_seq_in_dir(dir: &Path, writer: &str) -> Result<Option<u64>> {
    let mut best = None;
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name();
        let Some(name) = name.to_str() else { continue };
        let stem = name.split('.').next().unwrap_or("");
        if let Some(id) = SegmentId::parse(stem) {
            if id.writer() == writer {
                best = best.max(Some(id.seq()));
            }
        }
    }
    Ok(best)
}
