//! Per-segment bloom filters and their sidecar file format.
//!
//! Sidecar layout (little-endian): `[u32 k][u64 bit_len][u64 n_inserted]`
//! followed by `ceil(bit_len / 8)` bytes of bit array, bit `i` stored in byte
//! `i / 8` at position `i % 8`.

use std::fs;
use std::path::Path;

use crate::error::{Error, IoContext, Result};
use crate::hash::fnv1a64;

pub const DEFAULT_FP_RATE: f64 = 0.01;
const HEADER_LEN: usize = 4 + 8 + 8;
const MAX_HASHES: u32 = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Probe {
    Maybe,
    No,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BloomFilter {
    bits: Vec<u8>,
    bit_len: u64,
    hashes: u32,
    inserted: u64,
}

impl BloomFilter {
    /// Size a filter for `expected` keys at false-positive rate `fp_rate`.
    pub fn with_rate(expected: usize, fp_rate: f64) -> Self {
        if expected == 0 {
            return BloomFilter { bits: Vec::new(), bit_len: 0, hashes: 1, inserted: 0 };
        }
        let fp = fp_rate.clamp(1e-9, 0.5);
        let ln2 = std::f64::consts::LN_2;
        let bit_len = ((-(expected as f64) * fp.ln()) / (ln2 * ln2)).ceil().max(64.0) as u64;
        let hashes = ((bit_len as f64 / expected as f64) * ln2).round().clamp(1.0, MAX_HASHES as f64) as u32;
        BloomFilter {
            bits: vec![0; bit_len.div_ceil(8) as usize],
            bit_len,
            hashes,
            inserted: 0,
        }
    }

    pub fn build<'a>(keys: impl ExactSizeIterator<Item = &'a [u8]>, fp_rate: f64) -> Self {
        let mut filter = BloomFilter::with_rate(keys.len(), fp_rate);
        for key in keys {
            filter.insert(key);
        }
        filter
    }

    pub fn insert(&mut self, key: &[u8]) {
        if self.bit_len == 0 {
            // An unsized filter can only answer "no"; grow it to hold this key.
            *self = BloomFilter::with_rate(1, DEFAULT_FP_RATE);
        }
        let (h1, h2) = hash_pair(key);
        for i in 0..u64::from(self.hashes) {
            let bit = h1.wrapping_add(i.wrapping_mul(h2)) % self.bit_len;
            self.bits[(bit / 8) as usize] |= 1 << (bit % 8);
        }
        self.inserted += 1;
    }

    pub fn query(&self, key: &[u8]) -> Probe {
        if self.bit_len == 0 || self.inserted == 0 {
            return Probe::No;
        }
        let (h1, h2) = hash_pair(key);
        for i in 0..u64::from(self.hashes) {
            let bit = h1.wrapping_add(i.wrapping_mul(h2)) % self.bit_len;
            if self.bits[(bit / 8) as usize] & (1 << (bit % 8)) == 0 {
                return Probe::No;
            }
        }
        Probe::Maybe
    }

    pub fn may_contain(&self, key: &[u8]) -> bool {
        self.query(key) == Probe::Maybe
    }

    pub fn hashes(&self) -> u32 {
        self.hashes
    }

    pub fn bit_len(&self) -> u64 {
        self.bit_len
    }

    pub fn inserted(&self) -> u64 {
        self.inserted
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.bits.len());
        out.extend_from_slice(&self.hashes.to_le_bytes());
        out.extend_from_slice(&self.bit_len.to_le_bytes());
        out.extend_from_slice(&self.inserted.to_le_bytes());
        out.extend_from_slice(&self.bits);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, String> {
        if bytes.len() < HEADER_LEN {
            return Err("bloom sidecar shorter than its header".into());
        }
        let hashes = u32::from_le_bytes(bytes[0..4].try_into().unwrap());
        let bit_len = u64::from_le_bytes(bytes[4..12].try_into().unwrap());
        let inserted = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
        let bits = &bytes[HEADER_LEN..];
        if bits.len() as u64 != bit_len.div_ceil(8) {
            return Err(format!("bit array holds {} bytes, header says {bit_len} bits", bits.len()));
        }
        if hashes == 0 || hashes > MAX_HASHES {
            return Err(format!("hash count {hashes} out of range"));
        }
        Ok(BloomFilter { bits: bits.to_vec(), bit_len, hashes, inserted })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                Error::SegmentGone(path.display().to_string())
            } else {
                Error::io(path, e)
            }
        })?;
        BloomFilter::decode(&bytes).map_err(|reason| Error::corrupt(path, reason))
    }

    pub fn write_to(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode()).at(path)
    }
}

/// Double hashing: both probes derive from FNV-1a 64 of the key.
fn hash_pair(key: &[u8]) -> (u64, u64) {
    let h1 = fnv1a64(key);
    let h2 = fnv1a64(&h1.to_le_bytes()) | 1;
    (h1, h2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_filter_says_no() {
        let f = BloomFilter::with_rate(0, DEFAULT_FP_RATE);
        assert_eq!(f.query(b"anything"), Probe::No);
        let decoded = BloomFilter::decode(&f.encode()).unwrap();
        assert_eq!(decoded.query(b"anything"), Probe::No);
    }

    #[test]
    fn inserted_keys_answer_maybe() {
        let keys: Vec<Vec<u8>> = (0..1000u32).map(|i| format!("key{i}").into_bytes()).collect();
        let f = BloomFilter::build(keys.iter().map(Vec::as_slice), 0.01);
        assert!(keys.iter().all(|k| f.query(k) == Probe::Maybe));
        assert_eq!(f.inserted(), 1000);
    }

    #[test]
    fn insert_into_unsized_filter() {
        let mut f = BloomFilter::with_rate(0, 0.01);
        f.insert(b"late");
        assert!(f.may_contain(b"late"));
    }

    #[test]
    fn sidecar_round_trip_and_header() {
        let f = BloomFilter::build([b"a".as_slice(), b"b"].into_iter(), 0.01);
        let bytes = f.encode();
        assert_eq!(u32::from_le_bytes(bytes[0..4].try_into().unwrap()), f.hashes());
        assert_eq!(u64::from_le_bytes(bytes[4..12].try_into().unwrap()), f.bit_len());
        assert_eq!(u64::from_le_bytes(bytes[12..20].try_into().unwrap()), 2);
        assert_eq!(BloomFilter::decode(&bytes).unwrap(), f);
        assert!(BloomFilter::decode(&bytes[..bytes.len() - 1]).is_err());
    }
}
