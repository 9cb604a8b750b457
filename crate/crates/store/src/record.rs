//! Versioned key/value/tombstone records and their on-disk framing.
//!
//! Framing (little-endian):
//!
//! ```text
//! [u32 key_len][key][u64 timestamp][u8 flags][u32 val_len][value]
//! ```
//!
//! `flags` bit 0 marks a tombstone; tombstones always carry `val_len = 0`.

use std::cmp::Ordering;
use std::sync::atomic::{AtomicU64, Ordering as AtomicOrdering};
use std::time::{SystemTime, UNIX_EPOCH};

use crate::error::{Error, Result};

pub const MAX_KEY_LEN: usize = 4096;
pub const MAX_VALUE_LEN: usize = 16 * 1024 * 1024;

const FLAG_TOMBSTONE: u8 = 0b1;
/// Fixed framing overhead: key_len + timestamp + flags + val_len.
pub const RECORD_OVERHEAD: usize = 4 + 8 + 1 + 4;

pub type Timestamp = u64;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Record {
    pub key: Vec<u8>,
    /// `None` for a tombstone.
    pub value: Option<Vec<u8>>,
    pub timestamp: Timestamp,
}

impl Record {
    pub fn put(key: impl Into<Vec<u8>>, value: impl Into<Vec<u8>>, timestamp: Timestamp) -> Self {
        Record { key: key.into(), value: Some(value.into()), timestamp }
    }

    pub fn tombstone(key: impl Into<Vec<u8>>, timestamp: Timestamp) -> Self {
        Record { key: key.into(), value: None, timestamp }
    }

    pub fn is_tombstone(&self) -> bool {
        self.value.is_none()
    }

    pub fn encoded_len(&self) -> usize {
        RECORD_OVERHEAD + self.key.len() + self.value.as_ref().map_or(0, Vec::len)
    }

    pub fn encode_into(&self, buf: &mut Vec<u8>) {
        buf.reserve(self.encoded_len());
        buf.extend_from_slice(&(self.key.len() as u32).to_le_bytes());
        buf.extend_from_slice(&self.key);
        buf.extend_from_slice(&self.timestamp.to_le_bytes());
        match &self.value {
            Some(v) => {
                buf.push(0);
                buf.extend_from_slice(&(v.len() as u32).to_le_bytes());
                buf.extend_from_slice(v);
            }
            None => {
                buf.push(FLAG_TOMBSTONE);
                buf.extend_from_slice(&0u32.to_le_bytes());
            }
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(self.encoded_len());
        self.encode_into(&mut buf);
        buf
    }

    /// Decode one record from the front of `buf`.
    ///
    /// Returns `Ok(None)` when `buf` holds only a partial record (a torn
    /// append at the tail of a log), and the number of bytes consumed otherwise.
    pub fn decode(buf: &[u8]) -> Result<Option<(Record, usize)>, String> {
        let mut cur = Cursor { buf, pos: 0 };
        let Some(key_len) = cur.u32() else { return Ok(None) };
        let key_len = key_len as usize;
        if key_len == 0 || key_len > MAX_KEY_LEN {
            return Err(format!("key length {key_len} out of range"));
        }
        let Some(key) = cur.bytes(key_len) else { return Ok(None) };
        let Some(timestamp) = cur.u64() else { return Ok(None) };
        let Some(flags) = cur.u8() else { return Ok(None) };
        let Some(val_len) = cur.u32() else { return Ok(None) };
        let val_len = val_len as usize;
        if val_len > MAX_VALUE_LEN {
            return Err(format!("value length {val_len} out of range"));
        }
        let tombstone = flags & FLAG_TOMBSTONE != 0;
        if tombstone && val_len != 0 {
            return Err("tombstone with a value".into());
        }
        let Some(value) = cur.bytes(val_len) else { return Ok(None) };
        let record = Record {
            key: key.to_vec(),
            value: if tombstone { None } else { Some(value.to_vec()) },
            timestamp,
        };
        Ok(Some((record, cur.pos)))
    }

    /// Storage order: key ascending, then timestamp descending. Equal
    /// timestamps (possible across processes) put tombstones first, then
    /// compare values, so the order is total and deterministic.
    pub fn storage_cmp(&self, other: &Record) -> Ordering {
        self.key
            .cmp(&other.key)
            .then_with(|| newest_first(self, other))
    }

    /// True when `self` supersedes `other` for the same key.
    pub fn supersedes(&self, other: &Record) -> bool {
        newest_first(self, other) == Ordering::Less
    }
}

fn newest_first(a: &Record, b: &Record) -> Ordering {
    b.timestamp
        .cmp(&a.timestamp)
        .then_with(|| b.is_tombstone().cmp(&a.is_tombstone()))
        .then_with(|| b.value.cmp(&a.value))
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn bytes(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let out = self.buf.get(self.pos..end)?;
        self.pos = end;
        Some(out)
    }

    fn u8(&mut self) -> Option<u8> {
        self.bytes(1).map(|b| b[0])
    }

    fn u32(&mut self) -> Option<u32> {
        self.bytes(4).map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn u64(&mut self) -> Option<u64> {
        self.bytes(8).map(|b| u64::from_le_bytes(b.try_into().unwrap()))
    }
}

pub fn validate_key(key: &[u8]) -> Result<()> {
    if key.is_empty() {
        return Err(Error::InvalidKey("empty key".into()));
    }
    if key.len() > MAX_KEY_LEN {
        return Err(Error::InvalidKey(format!(
            "{} bytes exceeds the {MAX_KEY_LEN}-byte limit",
            key.len()
        )));
    }
    Ok(())
}

pub fn validate_value(value: &[u8]) -> Result<()> {
    if value.len() > MAX_VALUE_LEN {
        return Err(Error::ValueTooLarge(value.len()));
    }
    Ok(())
}

static LAST_ISSUED: AtomicU64 = AtomicU64::new(0);

pub fn wall_clock_micros() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_micros() as u64)
        .unwrap_or(0)
}

/// Hybrid logical clock: wall-clock microseconds, bumped so that every
/// timestamp issued in this process is strictly greater than the previous one.
pub fn next_timestamp() -> Timestamp {
    let now = wall_clock_micros();
    let prev = LAST_ISSUED
        .fetch_update(AtomicOrdering::AcqRel, AtomicOrdering::Acquire, |last| {
            Some(now.max(last + 1))
        })
        .expect("closure always returns Some");
    now.max(prev + 1)
}

/// Make sure future timestamps from this process exceed `ts`. Used when a
/// handle recovers a log written by an earlier process.
pub fn observe_timestamp(ts: Timestamp) {
    LAST_ISSUED.fetch_max(ts, AtomicOrdering::AcqRel);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn golden_encoding() {
        let r = Record::put(b"ab".to_vec(), b"xyz".to_vec(), 0x0102);
        let expected: Vec<u8> = [
            &[2, 0, 0, 0][..],
            b"ab",
            &[0x02, 0x01, 0, 0, 0, 0, 0, 0],
            &[0],
            &[3, 0, 0, 0],
            b"xyz",
        ]
        .concat();
        assert_eq!(r.encode(), expected);
        assert_eq!(r.encoded_len(), expected.len());

        let t = Record::tombstone(b"k".to_vec(), 7);
        let expected: Vec<u8> =
            [&[1, 0, 0, 0][..], b"k", &[7, 0, 0, 0, 0, 0, 0, 0], &[1], &[0, 0, 0, 0]].concat();
        assert_eq!(t.encode(), expected);
    }

    #[test]
    fn partial_record_is_not_an_error() {
        let bytes = Record::put(b"key".to_vec(), vec![9; 40], 3).encode();
        for cut in 0..bytes.len() {
            assert_eq!(Record::decode(&bytes[..cut]).unwrap(), None, "cut at {cut}");
        }
        let (rec, used) = Record::decode(&bytes).unwrap().unwrap();
        assert_eq!(used, bytes.len());
        assert_eq!(rec.value.unwrap().len(), 40);
    }

    #[test]
    fn tombstone_with_value_is_corrupt() {
        let mut bytes = Record::put(b"k".to_vec(), b"v".to_vec(), 1).encode();
        bytes[4 + 1 + 8] = 1;
        assert!(Record::decode(&bytes).is_err());
    }

    #[test]
    fn storage_order_is_key_then_newest() {
        let mut v = vec![
            Record::put(b"b".to_vec(), b"1".to_vec(), 1),
            Record::put(b"a".to_vec(), b"1".to_vec(), 5),
            Record::tombstone(b"a".to_vec(), 9),
        ];
        v.sort_by(Record::storage_cmp);
        let got: Vec<_> = v.iter().map(|r| (r.key.clone(), r.timestamp)).collect();
        assert_eq!(got, vec![(b"a".to_vec(), 9), (b"a".to_vec(), 5), (b"b".to_vec(), 1)]);
    }

    #[test]
    fn key_bounds() {
        assert!(validate_key(b"").is_err());
        assert!(validate_key(&vec![1; MAX_KEY_LEN]).is_ok());
        assert!(validate_key(&vec![1; MAX_KEY_LEN + 1]).is_err());
    }

    #[test]
    fn timestamps_strictly_increase() {
        let mut last = 0;
        for _ in 0..10_000 {
            let ts = next_timestamp();
            assert!(ts > last);
            last = ts;
        }
        observe_timestamp(last + 1_000_000_000);
        assert!(next_timestamp() > last + 1_000_000_000);
    }
}
