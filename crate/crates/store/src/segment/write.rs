use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, IoContext, Result};
use crate::record::{self, Record};

use super::SegmentId;

/// A single-owner append log, `<id>.live` in the store root.
///
/// Records are written to the log on every append (one `write` call, so a
/// crashed process loses at most a torn tail) and kept in memory, indexed by
/// key, until the segment is sealed for flushing.
#[derive(Debug)]
pub struct WriteSegment {
    id: SegmentId,
    path: PathBuf,
    file: Option<File>,
    records: Vec<Record>,
    index: HashMap<Vec<u8>, Vec<usize>>,
    bytes_written: u64,
    flush_threshold: u64,
    sync_appends: bool,
    sealed: bool,
    scratch: Vec<u8>,
}

/// The frozen contents of a write segment, handed to the flusher.
#[derive(Debug, Clone)]
pub struct SealedSegment {
    pub id: SegmentId,
    pub log_path: PathBuf,
    pub records: Vec<Record>,
    /// Position of the newest version of each key in `records`.
    pub latest: HashMap<Vec<u8>, usize>,
    pub bytes_written: u64,
}

impl WriteSegment {
    pub fn create(dir: &Path, id: SegmentId, flush_threshold: u64) -> Result<Self> {
        let path = dir.join(id.live_file());
        let file = OpenOptions::new().create_new(true).append(true).open(&path).at(&path)?;
        Ok(WriteSegment {
            id,
            path,
            file: Some(file),
            records: Vec::new(),
            index: HashMap::new(),
            bytes_written: 0,
            flush_threshold,
            sync_appends: false,
            sealed: false,
            scratch: Vec::new(),
        })
    }

    /// Re-open an existing log for appending (crash recovery by the same
    /// writer). A torn tail is truncated away.
    pub fn recover(path: &Path, flush_threshold: u64) -> Result<Self> {
        let mut seg = WriteSegment::replay(path)?;
        let file = OpenOptions::new().append(true).open(path).at(path)?;
        file.set_len(seg.bytes_written).at(path)?;
        seg.file = Some(file);
        seg.flush_threshold = flush_threshold;
        Ok(seg)
    }

    /// Read another writer's log without taking ownership (strong reads).
    pub fn replay(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::SegmentGone(path.display().to_string()),
            _ => Error::io(path, e),
        })?;
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::corrupt(path, "unnamed log"))?;
        let id = SegmentId::parse(stem).ok_or_else(|| Error::corrupt(path, "bad log name"))?;
        let mut seg = WriteSegment {
            id,
            path: path.to_path_buf(),
            file: None,
            records: Vec::new(),
            index: HashMap::new(),
            bytes_written: 0,
            flush_threshold: u64::MAX,
            sync_appends: false,
            sealed: false,
            scratch: Vec::new(),
        };
        let mut pos = 0;
        while pos < bytes.len() {
            match Record::decode(&bytes[pos..]) {
                Ok(Some((rec, used))) => {
                    pos += used;
                    seg.bytes_written += used as u64;
                    record::observe_timestamp(rec.timestamp);
                    seg.remember(rec);
                }
                // Torn tail from a crash mid-append.
                Ok(None) => break,
                Err(reason) => return Err(Error::corrupt(path, reason)),
            }
        }
        Ok(seg)
    }

    pub fn set_sync_appends(&mut self, sync: bool) {
        self.sync_appends = sync;
    }

    pub fn id(&self) -> &SegmentId {
        &self.id
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn bytes_written(&self) -> u64 {
        self.bytes_written
    }

    pub fn flush_threshold(&self) -> u64 {
        self.flush_threshold
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn is_sealed(&self) -> bool {
        self.sealed
    }

    pub fn needs_flush(&self) -> bool {
        self.bytes_written >= self.flush_threshold
    }

    /// Smallest timestamp held, i.e. the first appended one.
    pub fn oldest_timestamp(&self) -> Option<u64> {
        self.records.iter().map(|r| r.timestamp).min()
    }

    pub fn append(&mut self, record: Record) -> Result<u64> {
        if self.sealed {
            return Err(Error::SegmentSealed);
        }
        record::validate_key(&record.key)?;
        if let Some(v) = &record.value {
            record::validate_value(v)?;
        }
        let file = self.file.as_mut().ok_or(Error::SegmentSealed)?;
        self.scratch.clear();
        record.encode_into(&mut self.scratch);
        file.write_all(&self.scratch).at(&self.path)?;
        if self.sync_appends {
            file.sync_data().at(&self.path)?;
        }
        self.bytes_written += self.scratch.len() as u64;
        self.remember(record);
        Ok(self.bytes_written)
    }

    fn remember(&mut self, record: Record) {
        let pos = self.records.len();
        self.index.entry(record.key.clone()).or_default().push(pos);
        self.records.push(record);
    }

    /// Every version of `key` in this segment, newest first.
    pub fn get(&self, key: &[u8]) -> Vec<Record> {
        let mut out: Vec<Record> = self
            .index
            .get(key)
            .map(|positions| positions.iter().map(|&p| self.records[p].clone()).collect())
            .unwrap_or_default();
        out.sort_by(Record::storage_cmp);
        out
    }

    /// Newest version of `key`, if any.
    pub fn latest(&self, key: &[u8]) -> Option<&Record> {
        self.index
            .get(key)?
            .iter()
            .map(|&p| &self.records[p])
            .reduce(|best, r| if r.supersedes(best) { r } else { best })
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    /// Freeze the segment: further appends fail with "segment sealed". The
    /// log is not synced here; the flusher makes the contents durable.
    pub fn seal(&mut self) -> Result<SealedSegment> {
        if self.sealed {
            return Err(Error::SegmentSealed);
        }
        self.file = None;
        self.sealed = true;
        let records = std::mem::take(&mut self.records);
        let latest = std::mem::take(&mut self.index)
            .into_iter()
            .map(|(key, positions)| {
                let best = positions
                    .into_iter()
                    .reduce(|a, b| if records[b].supersedes(&records[a]) { b } else { a })
                    .expect("index entries are non-empty");
                (key, best)
            })
            .collect();
        Ok(SealedSegment {
            id: self.id.clone(),
            log_path: self.path.clone(),
            records,
            latest,
            bytes_written: self.bytes_written,
        })
    }
}

impl SealedSegment {
    /// Seal the contents of a replayed log (crash recovery).
    pub fn from_log(mut log: WriteSegment) -> Result<Self> {
        log.seal()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn latest(&self, key: &[u8]) -> Option<&Record> {
        self.latest.get(key).map(|&p| &self.records[p])
    }

    /// Remove the log once its contents are published elsewhere.
    pub fn discard_log(&self) -> Result<()> {
        match fs::remove_file(&self.log_path) {
            Ok(()) => Ok(()),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(()),
            Err(e) => Err(Error::io(&self.log_path, e)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seg(dir: &Path) -> WriteSegment {
        WriteSegment::create(dir, SegmentId::new("w", 1).unwrap(), 1 << 20).unwrap()
    }

    #[test]
    fn append_then_get() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = seg(dir.path());
        s.append(Record::put(b"a".to_vec(), b"1".to_vec(), 1)).unwrap();
        assert_eq!(s.get(b"a"), vec![Record::put(b"a".to_vec(), b"1".to_vec(), 1)]);
        assert!(s.get(b"zz").is_empty());
    }

    #[test]
    fn tombstone_is_latest() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = seg(dir.path());
        s.append(Record::put(b"a".to_vec(), b"1".to_vec(), 1)).unwrap();
        s.append(Record::tombstone(b"a".to_vec(), 2)).unwrap();
        assert!(s.latest(b"a").unwrap().is_tombstone());
        let versions = s.get(b"a");
        assert_eq!(versions.iter().map(|r| r.timestamp).collect::<Vec<_>>(), vec![2, 1]);
    }

    #[test]
    fn bytes_written_matches_independent_size_oracle() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = seg(dir.path());
        // 17 bytes of framing + 3-byte key + 80-byte value = 100 bytes.
        for ts in 1..=3 {
            s.append(Record::put(b"key".to_vec(), vec![7; 80], ts)).unwrap();
        }
        assert_eq!(s.bytes_written(), 300);
        assert_eq!(fs::metadata(s.path()).unwrap().len(), 300);
    }

    #[test]
    fn sealed_segment_rejects_appends() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = seg(dir.path());
        s.append(Record::put(b"a".to_vec(), b"1".to_vec(), 1)).unwrap();
        let sealed = s.seal().unwrap();
        assert_eq!(sealed.records.len(), 1);
        assert!(matches!(
            s.append(Record::put(b"b".to_vec(), b"1".to_vec(), 2)),
            Err(Error::SegmentSealed)
        ));
    }

    #[test]
    fn invalid_key_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = seg(dir.path());
        let err = s.append(Record::put(vec![0; 4097], b"1".to_vec(), 1)).unwrap_err();
        assert!(matches!(err, Error::InvalidKey(_)));
        assert_eq!(s.bytes_written(), 0);
    }

    #[test]
    fn replay_tolerates_torn_tail_and_recover_truncates() {
        let dir = tempfile::tempdir().unwrap();
        let path = {
            let mut s = seg(dir.path());
            s.append(Record::put(b"a".to_vec(), b"1".to_vec(), 1)).unwrap();
            s.append(Record::put(b"b".to_vec(), b"2".to_vec(), 2)).unwrap();
            s.path().to_path_buf()
        };
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(&[5, 0, 0]).unwrap();
        drop(f);

        let replayed = WriteSegment::replay(&path).unwrap();
        assert_eq!(replayed.len(), 2);
        let mut recovered = WriteSegment::recover(&path, 1 << 20).unwrap();
        recovered.append(Record::put(b"c".to_vec(), b"3".to_vec(), 3)).unwrap();
        assert_eq!(WriteSegment::replay(&path).unwrap().len(), 3);
    }
}
