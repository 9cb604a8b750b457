use std::collections::{BTreeMap, HashSet};

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tenantkv_store::bloom::{BloomFilter, Probe};
use tenantkv_store::catalog::{route, TreeConfig};
use tenantkv_store::record::{Record, RECORD_OVERHEAD};
use tenantkv_store::segment::{flush, SegmentId, SegmentReader, WriteSegment};

#[test]
fn bloom_false_positive_rate_at_100k() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut inserted = HashSet::new();
    while inserted.len() < 100_000 {
        inserted.insert(rng.random::<u64>().to_le_bytes().to_vec());
    }
    let f = BloomFilter::build(inserted.iter().map(Vec::as_slice), 0.01);
    assert!(inserted.iter().all(|k| f.query(k) == Probe::Maybe));
    let mut probes = 0;
    let mut fps = 0;
    while probes < 100_000 {
        let k = rng.random::<u64>().to_le_bytes().to_vec();
        if inserted.contains(&k) {
            continue;
        }
        probes += 1;
        fps += f.may_contain(&k) as usize;
    }
    let rate = fps as f64 / probes as f64;
    assert!(rate <= 0.02, "false-positive rate {rate}");
}

#[test]
fn route_shares_are_near_uniform() {
    let cfg = TreeConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for level in 1..=2 {
        let mut counts = [0usize; 4];
        for _ in 0..100_000 {
            let key: Vec<u8> = (0..24).map(|_| rng.random()).collect();
            counts[route(&key, &cfg, level) as usize] += 1;
        }
        for c in counts {
            let share = c as f64 / 100_000.0;
            assert!((0.2..=0.3).contains(&share), "level {level} share {share}");
        }
    }
}

#[test]
fn route_is_deterministic() {
    let cfg = TreeConfig::default();
    let k = b"some-key-that-is-longer-than-16";
    assert_eq!(cfg.leaf_of(k), cfg.leaf_of(k));
    assert_eq!(route(k, &cfg, 1), route(k, &cfg, 1));
}

#[derive(Debug, Clone)]
enum Op {
    Put(u8, Vec<u8>),
    Delete(u8),
}

fn ops() -> impl Strategy<Value = Vec<Op>> {
    prop::collection::vec(
        prop_oneof![
            3 => (0u8..40, prop::collection::vec(any::<u8>(), 0..64)).prop_map(|(k, v)| Op::Put(k, v)),
            1 => (0u8..40).prop_map(Op::Delete),
        ],
        0..300,
    )
}

fn key(k: u8) -> Vec<u8> {
    format!("k{k:03}").into_bytes()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, ..ProptestConfig::default() })]

    #[test]
    fn flush_round_trip_matches_model(ops in ops()) {
        let dir = tempfile::tempdir().unwrap();
        let mut w = WriteSegment::create(dir.path(), SegmentId::new("p", 1).unwrap(), u64::MAX).unwrap();
        let mut model: BTreeMap<Vec<u8>, Vec<Record>> = BTreeMap::new();
        let mut expected_bytes = 0u64;
        for (ts, op) in ops.iter().enumerate() {
            let rec = match op {
                Op::Put(k, v) => Record::put(key(*k), v.clone(), ts as u64 + 1),
                Op::Delete(k) => Record::tombstone(key(*k), ts as u64 + 1),
            };
            expected_bytes += (RECORD_OVERHEAD + rec.key.len() + rec.value.as_ref().map_or(0, Vec::len)) as u64;
            model.entry(rec.key.clone()).or_default().insert(0, rec.clone());
            w.append(rec).unwrap();
        }
        prop_assert_eq!(w.bytes_written(), expected_bytes);
        let pre: BTreeMap<Vec<u8>, Vec<Record>> = (0..40).map(|k| (key(k), w.get(&key(k)))).collect();
        let sealed = w.seal().unwrap();
        let meta = flush(&sealed, dir.path(), 0.01).unwrap();
        if ops.is_empty() {
            prop_assert!(meta.is_none());
            return Ok(());
        }
        let meta = meta.unwrap();
        let reader = SegmentReader::open(dir.path(), &meta.id).unwrap();
        let mut concatenated = Vec::new();
        for k in 0..40u8 {
            let got = reader.get(&key(k)).unwrap();
            let want = model.get(&key(k)).cloned().unwrap_or_default();
            prop_assert_eq!(&got, &want);
            prop_assert_eq!(&got, &pre[&key(k)]);
            concatenated.extend(got);
        }
        let streamed: Vec<Record> = reader.iter().map(Result::unwrap).collect();
        prop_assert_eq!(&streamed, &concatenated);
        let again: Vec<Record> = reader.iter().map(Result::unwrap).collect();
        prop_assert_eq!(streamed, again);
    }

    #[test]
    fn bloom_has_no_false_negatives(keys in prop::collection::hash_set(prop::collection::vec(any::<u8>(), 1..40), 0..500)) {
        let f = BloomFilter::build(keys.iter().map(Vec::as_slice), 0.01);
        for k in &keys {
            prop_assert!(f.may_contain(k));
        }
        let decoded = BloomFilter::decode(&f.encode()).unwrap();
        for k in &keys {
            prop_assert!(decoded.may_contain(k));
        }
    }
}
