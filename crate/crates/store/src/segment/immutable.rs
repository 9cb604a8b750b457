//! Immutable sorted segment files.
//!
//! ```text
//! [data: records sorted by (key asc, timestamp desc)]
//! [sparse index: every 16th record as [u32 key_len][key][u64 data offset]]
//! [footer, 64 bytes]
//! ```
//!
//! Footer (little-endian): `u64 index_offset, u64 index_entries,
//! u64 record_count, u64 created_us, 16 reserved zero bytes, u32 version,
//! u32 reserved, u64 magic`.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::os::unix::fs::FileExt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bloom::BloomFilter;
use crate::error::{Error, IoContext, Result};
use crate::record::{self, Record};

use super::{tmp_path, SealedSegment, SegmentId};

pub const SEGMENT_MAGIC: u64 = u64::from_le_bytes(*b"TKVSEG01");
pub const FORMAT_VERSION: u32 = 1;
pub const FOOTER_LEN: usize = 64;
pub const INDEX_INTERVAL: usize = 16;

/// Metadata describing a durable segment + bloom sidecar pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImmutableSegment {
    pub id: SegmentId,
    pub records: u64,
    #[serde(with = "hex_bytes")]
    pub min_key: Vec<u8>,
    #[serde(with = "hex_bytes")]
    pub max_key: Vec<u8>,
    /// Segment file size in bytes.
    pub bytes: u64,
    pub created_us: u64,
}

impl ImmutableSegment {
    pub fn path(&self, dir: &Path) -> PathBuf {
        dir.join(self.id.segment_file())
    }

    pub fn bloom_path(&self, dir: &Path) -> PathBuf {
        dir.join(self.id.bloom_file())
    }
}

pub(crate) mod hex_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        hex::decode(s).map_err(serde::de::Error::custom)
    }
}

/// Seal-and-sort: write a sealed write segment as an immutable segment under
/// the same id. An empty segment produces nothing.
pub fn flush(sealed: &SealedSegment, dir: &Path, fp_rate: f64) -> Result<Option<ImmutableSegment>> {
    if sealed.is_empty() {
        return Ok(None);
    }
    let mut records = sealed.records.clone();
    records.sort_by(Record::storage_cmp);
    write_sorted(dir, sealed.id.clone(), records, fp_rate)
}

/// Write records that are already in storage order. Files are written under
/// a `.tmp` suffix, synced, then renamed into place.
pub fn write_sorted(
    dir: &Path,
    id: SegmentId,
    records: impl IntoIterator<Item = Record>,
    fp_rate: f64,
) -> Result<Option<ImmutableSegment>> {
    let seg_path = dir.join(id.segment_file());
    let seg_tmp = tmp_path(&seg_path);
    let bloom_path = dir.join(id.bloom_file());
    let bloom_tmp = tmp_path(&bloom_path);

    let result = (|| {
        let file = File::create(&seg_tmp).at(&seg_tmp)?;
        let mut out = BufWriter::with_capacity(1 << 20, file);
        let mut offset = 0u64;
        let mut count = 0u64;
        let mut index: Vec<(Vec<u8>, u64)> = Vec::new();
        let mut keys: Vec<Vec<u8>> = Vec::new();
        let mut buf = Vec::new();
        let mut prev: Option<Record> = None;
        for rec in records {
            if let Some(p) = &prev {
                debug_assert!(p.storage_cmp(&rec).is_le(), "records out of order");
            }
            if (count as usize).is_multiple_of(INDEX_INTERVAL) {
                index.push((rec.key.clone(), offset));
            }
            if keys.last() != Some(&rec.key) {
                keys.push(rec.key.clone());
            }
            buf.clear();
            rec.encode_into(&mut buf);
            out.write_all(&buf).at(&seg_tmp)?;
            offset += buf.len() as u64;
            count += 1;
            prev = Some(rec);
        }
        if count == 0 {
            drop(out);
            let _ = fs::remove_file(&seg_tmp);
            return Ok(None);
        }
        let index_offset = offset;
        for (key, off) in &index {
            out.write_all(&(key.len() as u32).to_le_bytes()).at(&seg_tmp)?;
            out.write_all(key).at(&seg_tmp)?;
            out.write_all(&off.to_le_bytes()).at(&seg_tmp)?;
        }
        let created_us = record::wall_clock_micros();
        let mut footer = Vec::with_capacity(FOOTER_LEN);
        footer.extend_from_slice(&index_offset.to_le_bytes());
        footer.extend_from_slice(&(index.len() as u64).to_le_bytes());
        footer.extend_from_slice(&count.to_le_bytes());
        footer.extend_from_slice(&created_us.to_le_bytes());
        footer.extend_from_slice(&[0u8; 16]);
        footer.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        footer.extend_from_slice(&0u32.to_le_bytes());
        footer.extend_from_slice(&SEGMENT_MAGIC.to_le_bytes());
        debug_assert_eq!(footer.len(), FOOTER_LEN);
        out.write_all(&footer).at(&seg_tmp)?;
        let file = out.into_inner().map_err(|e| Error::io(&seg_tmp, e.into_error()))?;
        file.sync_all().at(&seg_tmp)?;
        let bytes = file.metadata().at(&seg_tmp)?.len();

        let bloom = BloomFilter::build(keys.iter().map(Vec::as_slice), fp_rate);
        {
            let mut bf = File::create(&bloom_tmp).at(&bloom_tmp)?;
            bf.write_all(&bloom.encode()).at(&bloom_tmp)?;
            bf.sync_all().at(&bloom_tmp)?;
        }
        fs::rename(&bloom_tmp, &bloom_path).at(&bloom_path)?;
        fs::rename(&seg_tmp, &seg_path).at(&seg_path)?;
        sync_dir(dir)?;

        Ok(Some(ImmutableSegment {
            id: id.clone(),
            records: count,
            min_key: keys.first().cloned().unwrap_or_default(),
            max_key: keys.last().cloned().unwrap_or_default(),
            bytes,
            created_us,
        }))
    })();

    if result.is_err() {
        let _ = fs::remove_file(&seg_tmp);
        let _ = fs::remove_file(&bloom_tmp);
    }
    result
}

pub(crate) fn sync_dir(dir: &Path) -> Result<()> {
    File::open(dir).and_then(|d| d.sync_all()).at(dir)
}

fn open_segment_file(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::SegmentGone(path.display().to_string()),
        _ => Error::io(path, e),
    })
}

/// Read handle over one immutable segment: footer, sparse index and bloom
/// filter are held in memory; data blocks are read on demand.
#[derive(Debug)]
pub struct SegmentReader {
    id: SegmentId,
    path: PathBuf,
    file: File,
    index: Vec<(Vec<u8>, u64)>,
    data_len: u64,
    record_count: u64,
    created_us: u64,
    bloom: BloomFilter,
}

impl SegmentReader {
    pub fn open(dir: &Path, id: &SegmentId) -> Result<Self> {
        let path = dir.join(id.segment_file());
        let file = open_segment_file(&path)?;
        let len = file.metadata().at(&path)?.len();
        if len < FOOTER_LEN as u64 {
            return Err(Error::corrupt(&path, "shorter than footer"));
        }
        let mut footer = [0u8; FOOTER_LEN];
        file.read_exact_at(&mut footer, len - FOOTER_LEN as u64).at(&path)?;
        let word = |i: usize| u64::from_le_bytes(footer[i..i + 8].try_into().unwrap());
        let index_offset = word(0);
        let index_entries = word(8);
        let record_count = word(16);
        let created_us = word(24);
        let version = u32::from_le_bytes(footer[48..52].try_into().unwrap());
        if word(56) != SEGMENT_MAGIC {
            return Err(Error::corrupt(&path, "bad magic"));
        }
        if version != FORMAT_VERSION {
            return Err(Error::corrupt(&path, format!("unsupported format version {version}")));
        }
        let index_end = len - FOOTER_LEN as u64;
        if index_offset > index_end {
            return Err(Error::corrupt(&path, "index offset past footer"));
        }
        let mut raw = vec![0u8; (index_end - index_offset) as usize];
        file.read_exact_at(&mut raw, index_offset).at(&path)?;
        let mut index = Vec::with_capacity(index_entries as usize);
        let mut pos = 0usize;
        for _ in 0..index_entries {
            let bad = || Error::corrupt(&path, "truncated index");
            let klen = u32::from_le_bytes(raw.get(pos..pos + 4).ok_or_else(bad)?.try_into().unwrap()) as usize;
            pos += 4;
            let key = raw.get(pos..pos + klen).ok_or_else(bad)?.to_vec();
            pos += klen;
            let off = u64::from_le_bytes(raw.get(pos..pos + 8).ok_or_else(bad)?.try_into().unwrap());
            pos += 8;
            index.push((key, off));
        }
        let bloom = BloomFilter::load(&dir.join(id.bloom_file()))?;
        Ok(SegmentReader {
            id: id.clone(),
            path,
            file,
            index,
            data_len: index_offset,
            record_count,
            created_us,
            bloom,
        })
    }

    pub fn id(&self) -> &SegmentId {
        &self.id
    }

    pub fn record_count(&self) -> u64 {
        self.record_count
    }

    pub fn created_us(&self) -> u64 {
        self.created_us
    }

    pub fn bloom(&self) -> &BloomFilter {
        &self.bloom
    }

    fn block_end(&self, block: usize) -> u64 {
        self.index.get(block + 1).map_or(self.data_len, |(_, off)| *off)
    }

    fn read_block(&self, block: usize) -> Result<Vec<Record>> {
        let start = self.index[block].1;
        let end = self.block_end(block);
        let mut buf = vec![0u8; (end - start) as usize];
        self.file.read_exact_at(&mut buf, start).at(&self.path)?;
        let mut out = Vec::with_capacity(INDEX_INTERVAL);
        let mut pos = 0;
        while pos < buf.len() {
            match Record::decode(&buf[pos..]) {
                Ok(Some((rec, used))) => {
                    out.push(rec);
                    pos += used;
                }
                Ok(None) => return Err(Error::corrupt(&self.path, "record straddles block end")),
                Err(reason) => return Err(Error::corrupt(&self.path, reason)),
            }
        }
        Ok(out)
    }

    /// Every version of `key` in this segment, newest first. Does not consult
    /// the bloom filter.
    pub fn get(&self, key: &[u8]) -> Result<Vec<Record>> {
        if self.index.is_empty() {
            return Ok(Vec::new());
        }
        // Last block whose first key sorts strictly before `key`: versions of
        // `key` may begin inside it.
        let p = self.index.partition_point(|(k, _)| k.as_slice() < key);
        let mut block = p.saturating_sub(1);
        let mut out = Vec::new();
        while block < self.index.len() {
            for rec in self.read_block(block)? {
                match rec.key.as_slice().cmp(key) {
                    std::cmp::Ordering::Less => {}
                    std::cmp::Ordering::Equal => out.push(rec),
                    std::cmp::Ordering::Greater => return Ok(out),
                }
            }
            block += 1;
        }
        Ok(out)
    }

    pub fn iter(&self) -> SegmentIter<'_> {
        SegmentIter { reader: self, offset: 0, buf: Vec::new(), pos: 0, failed: false }
    }
}

/// Sequential scan in storage order, reading 1 MiB at a time.
pub struct SegmentIter<'a> {
    reader: &'a SegmentReader,
    offset: u64,
    buf: Vec<u8>,
    pos: usize,
    failed: bool,
}

const ITER_CHUNK: u64 = 1 << 20;

impl Iterator for SegmentIter<'_> {
    type Item = Result<Record>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        loop {
            match Record::decode(&self.buf[self.pos..]) {
                Ok(Some((rec, used))) => {
                    self.pos += used;
                    return Some(Ok(rec));
                }
                Ok(None) => {}
                Err(reason) => {
                    self.failed = true;
                    return Some(Err(Error::corrupt(&self.reader.path, reason)));
                }
            }
            if self.offset >= self.reader.data_len {
                if self.pos < self.buf.len() {
                    self.failed = true;
                    return Some(Err(Error::corrupt(&self.reader.path, "truncated record")));
                }
                return None;
            }
            self.buf.drain(..self.pos);
            self.pos = 0;
            let want = ITER_CHUNK.min(self.reader.data_len - self.offset) as usize;
            let old = self.buf.len();
            self.buf.resize(old + want, 0);
            if let Err(e) = self.reader.file.read_exact_at(&mut self.buf[old..], self.offset) {
                self.failed = true;
                return Some(Err(Error::io(&self.reader.path, e)));
            }
            self.offset += want as u64;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bloom::Probe;

    fn id(n: u64) -> SegmentId {
        SegmentId::new("t", n).unwrap()
    }

    #[test]
    fn empty_flush_produces_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let sealed = SealedSegment {
            id: id(1),
            log_path: dir.path().join("x.live"),
            records: vec![],
            latest: Default::default(),
            bytes_written: 0,
        };
        assert!(flush(&sealed, dir.path(), 0.01).unwrap().is_none());
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
    }

    #[test]
    fn flush_sorts_records() {
        let dir = tempfile::tempdir().unwrap();
        let sealed = SealedSegment {
            id: id(2),
            log_path: dir.path().join("x.live"),
            records: vec![
                Record::put(b"b".to_vec(), b"2".to_vec(), 1),
                Record::put(b"a".to_vec(), b"1".to_vec(), 2),
            ],
            latest: Default::default(),
            bytes_written: 0,
        };
        let meta = flush(&sealed, dir.path(), 0.01).unwrap().unwrap();
        assert_eq!((meta.min_key.as_slice(), meta.max_key.as_slice()), (&b"a"[..], &b"b"[..]));
        let reader = SegmentReader::open(dir.path(), &meta.id).unwrap();
        let keys: Vec<_> = reader.iter().map(|r| r.unwrap().key).collect();
        assert_eq!(keys, vec![b"a".to_vec(), b"b".to_vec()]);
        assert!(!dir.path().join("t-2.seg.tmp").exists());
    }

    #[test]
    fn versions_newest_first_across_blocks() {
        let dir = tempfile::tempdir().unwrap();
        let mut records = Vec::new();
        for ts in 1..=40 {
            records.push(Record::put(b"m".to_vec(), vec![ts as u8], ts));
        }
        for i in 0..20u8 {
            records.push(Record::put(vec![b'a', i], vec![i], 1));
            records.push(Record::put(vec![b'z', i], vec![i], 1));
        }
        records.sort_by(Record::storage_cmp);
        let meta = write_sorted(dir.path(), id(3), records, 0.01).unwrap().unwrap();
        let reader = SegmentReader::open(dir.path(), &meta.id).unwrap();
        let ts: Vec<_> = reader.get(b"m").unwrap().iter().map(|r| r.timestamp).collect();
        assert_eq!(ts, (1..=40).rev().collect::<Vec<_>>());
        assert!(reader.get(b"n").unwrap().is_empty());
        assert_eq!(reader.get(&[b'z', 19]).unwrap().len(), 1);
        assert_eq!(reader.bloom().query(b"m"), Probe::Maybe);
    }

    #[test]
    fn footer_layout_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let rec = Record::put(b"k".to_vec(), b"v".to_vec(), 9);
        let meta = write_sorted(dir.path(), id(4), vec![rec.clone()], 0.01).unwrap().unwrap();
        let bytes = fs::read(meta.path(dir.path())).unwrap();
        let data_len = rec.encoded_len();
        assert_eq!(&bytes[..data_len], rec.encode().as_slice());
        // one index entry: [u32 1]["k"][u64 0]
        let idx = &bytes[data_len..data_len + 13];
        assert_eq!(idx, &[1, 0, 0, 0, b'k', 0, 0, 0, 0, 0, 0, 0, 0]);
        let footer = &bytes[bytes.len() - FOOTER_LEN..];
        assert_eq!(u64::from_le_bytes(footer[0..8].try_into().unwrap()), data_len as u64);
        assert_eq!(u64::from_le_bytes(footer[8..16].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(footer[16..24].try_into().unwrap()), 1);
        assert_eq!(&footer[32..48], &[0u8; 16]);
        assert_eq!(u32::from_le_bytes(footer[48..52].try_into().unwrap()), FORMAT_VERSION);
        assert_eq!(&footer[56..64], b"TKVSEG01");
        assert_eq!(bytes.len() as u64, meta.bytes);
    }

    #[test]
    fn missing_file_is_segment_gone() {
        let dir = tempfile::tempdir().unwrap();
        let err = SegmentReader::open(dir.path(), &id(99)).unwrap_err();
        assert!(err.is_segment_gone());
    }

    #[test]
    fn iteration_is_repeatable() {
        let dir = tempfile::tempdir().unwrap();
        let records: Vec<_> =
            (0..100u32).map(|i| Record::put(format!("{i:04}").into_bytes(), vec![1; 10], 1)).collect();
        let meta = write_sorted(dir.path(), id(5), records.clone(), 0.01).unwrap().unwrap();
        let reader = SegmentReader::open(dir.path(), &meta.id).unwrap();
        let a: Vec<_> = reader.iter().collect::<Result<_>>().unwrap();
        let b: Vec<_> = reader.iter().collect::<Result<_>>().unwrap();
        assert_eq!(a, records);
        assert_eq!(a, b);
    }
}
