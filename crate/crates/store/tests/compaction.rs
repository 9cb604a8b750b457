use std::collections::BTreeMap;
use std::path::Path;
use std::time::Duration;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tenantkv_store::catalog::{capacity, Catalog, Layout, Lease, Manifest, TreeConfig};
use tenantkv_store::compaction::{
    plan_size_based, plan_tree_based, CompactionManager, ManagerConfig, TaskKind,
};
use tenantkv_store::engine::{Consistency, StoreHandle, StoreOptions};
use tenantkv_store::record::Record;
use tenantkv_store::segment::{write_sorted, ImmutableSegment, SegmentId};

fn key(i: u64) -> Vec<u8> {
    format!("user{:016}", i.wrapping_mul(0x9E37_79B9_7F4A_7C15) % 10_000_000_000_000_000).into_bytes()
}

fn seg(dir: &Path, writer: &str, seq: u64, n: usize) -> ImmutableSegment {
    let mut recs: Vec<_> = (0..n as u64).map(|i| Record::put(key(seq * 1000 + i), vec![0; 10], seq)).collect();
    recs.sort_by(Record::storage_cmp);
    write_sorted(dir, SegmentId::new(writer, seq).unwrap(), recs, 0.01).unwrap().unwrap()
}

fn catalog_with(dir: &Path, layout: Layout, placements: &[(&str, usize)]) -> Manifest {
    let cat = Catalog::new(dir);
    cat.init(layout).unwrap();
    let mut seq = 1;
    for (node, count) in placements {
        for _ in 0..*count {
            cat.publish(seg(dir, "w", seq, 1 + seq as usize % 5), node.parse().unwrap()).unwrap();
            seq += 1;
        }
    }
    cat.load().unwrap()
}

#[test]
fn size_plan_examples() {
    let dir = tempfile::tempdir().unwrap();
    let m = catalog_with(dir.path(), Layout::size_based(6), &[("flat", 5)]);
    assert!(plan_size_based(&m, 6).is_none());
    let dir = tempfile::tempdir().unwrap();
    let m = catalog_with(dir.path(), Layout::size_based(6), &[("flat", 6)]);
    assert_eq!(plan_size_based(&m, 6).unwrap().inputs.len(), 2);
    let dir = tempfile::tempdir().unwrap();
    let m = catalog_with(dir.path(), Layout::size_based(48), &[("flat", 50)]);
    let t = plan_size_based(&m, 48).unwrap();
    assert_eq!(t.inputs.len(), 4);
    assert_eq!(t.kind, TaskKind::SizeMerge);
    // The picks are the four smallest segments.
    let mut sizes: Vec<_> = m.segments().map(|(_, s)| (s.bytes, s.id.clone())).collect();
    sizes.sort();
    let smallest: Vec<_> = sizes[..4].iter().map(|(_, id)| id.clone()).collect();
    assert_eq!(t.inputs, smallest);
}

#[test]
fn tree_plan_examples() {
    let dir = tempfile::tempdir().unwrap();
    let m = catalog_with(dir.path(), Layout::default(), &[("root/1", 3), ("root/1/2", 3)]);
    assert!(plan_tree_based(&m, 3).is_empty());

    let dir = tempfile::tempdir().unwrap();
    let m = catalog_with(dir.path(), Layout::default(), &[("root/0/3", 4)]);
    let plan = plan_tree_based(&m, 3);
    assert_eq!(plan.len(), 1);
    assert_eq!(plan[0].kind, TaskKind::MergeLeaf);
    assert_eq!(plan[0].inputs.len(), 4);
    assert!(plan[0].leaf_final);

    let dir = tempfile::tempdir().unwrap();
    let m = catalog_with(dir.path(), Layout::default(), &[("root/2", 4), ("root/2/1", 4), ("root/3/0", 4)]);
    let plan = plan_tree_based(&m, 3);
    let kinds: Vec<_> = plan.iter().map(|t| (t.kind, t.source.to_string())).collect();
    assert_eq!(
        kinds,
        vec![(TaskKind::PushDown, "root/2".to_string()), (TaskKind::MergeLeaf, "root/3/0".to_string())]
    );
    for (i, a) in plan.iter().enumerate() {
        for b in &plan[i + 1..] {
            assert!(!a.source.is_ancestor_of(&b.source) && !b.source.is_ancestor_of(&a.source));
        }
    }
}

#[test]
fn merge_leaf_under_nonempty_ancestor_keeps_tombstones() {
    let dir = tempfile::tempdir().unwrap();
    let m = catalog_with(dir.path(), Layout::default(), &[("root/2", 1), ("root/2/1", 4)]);
    let plan = plan_tree_based(&m, 3);
    assert_eq!(plan.len(), 1);
    assert!(!plan[0].leaf_final);
}

#[test]
fn retire_three_for_one_drops_count_by_two() {
    let dir = tempfile::tempdir().unwrap();
    let m = catalog_with(dir.path(), Layout::default(), &[("root/0/0", 4)]);
    let before = m.segment_count();
    let mut mgr = CompactionManager::start(dir.path(), ManagerConfig::default()).unwrap();
    let stats = mgr.run_once(false).unwrap();
    let after = Catalog::new(dir.path()).load().unwrap();
    assert_eq!(stats.tasks_run, 1);
    assert_eq!(after.segment_count(), before - 3);
    assert_eq!(after.generation, m.generation + 1);
}

#[test]
fn manager_runs_at_most_pool_size_concurrently() {
    let dir = tempfile::tempdir().unwrap();
    let leaves: Vec<String> = (0..4).flat_map(|a| (0..2).map(move |b| format!("root/{a}/{b}"))).collect();
    let placements: Vec<(&str, usize)> = leaves.iter().map(|l| (l.as_str(), 4)).collect();
    catalog_with(dir.path(), Layout::default(), &placements);
    let mut cfg = ManagerConfig::default();
    cfg.workers = 3;
    let mut mgr = CompactionManager::start(dir.path(), cfg).unwrap();
    let stats = mgr.run_once(false).unwrap();
    assert_eq!(stats.tasks_run, 8);
    assert!(stats.max_concurrent <= 3 && stats.max_concurrent >= 1);
    assert_eq!(Catalog::new(dir.path()).load().unwrap().segment_count(), 8);
}

#[test]
fn second_manager_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    Catalog::new(dir.path()).init(Layout::default()).unwrap();
    let _m = CompactionManager::start(dir.path(), ManagerConfig::default()).unwrap();
    assert!(CompactionManager::start(dir.path(), ManagerConfig::default()).is_err());
}

#[test]
fn expired_lease_aborts_retire() {
    let dir = tempfile::tempdir().unwrap();
    let m = catalog_with(dir.path(), Layout::default(), &[("root/0/0", 1)]);
    let lease = Lease::acquire(dir.path(), "slow", Duration::from_millis(10)).unwrap();
    std::thread::sleep(Duration::from_millis(30));
    let old: Vec<SegmentId> = m.segments().map(|(_, s)| s.id.clone()).collect();
    let res = Catalog::new(dir.path()).retire(&lease, &old, vec![]);
    assert!(res.is_err());
    assert_eq!(Catalog::new(dir.path()).load().unwrap(), m);
}

#[test]
fn reader_recovers_from_retired_segment() {
    let dir = tempfile::tempdir().unwrap();
    let mut w = StoreHandle::open(dir.path(), StoreOptions::new("w")).unwrap();
    for round in 0..6 {
        for i in 0..50 {
            w.put(&key(i), format!("{round}").as_bytes()).unwrap();
        }
        w.flush().unwrap();
    }
    let mut o = StoreOptions::new("r");
    o.refresh_interval = Duration::from_secs(3600);
    let mut r = StoreHandle::open(dir.path(), o).unwrap();
    // The reader's snapshot still lists segments that compaction retires.
    let mut mgr = CompactionManager::start(dir.path(), ManagerConfig::default()).unwrap();
    mgr.run_until_quiescent(true).unwrap();
    for i in 0..50 {
        assert_eq!(r.get(&key(i)).unwrap(), Some(b"5".to_vec()));
    }
    assert!(r.stats().gone_retries > 0);
}

fn leaf_bound_holds(m: &Manifest, cfg: &TreeConfig) -> bool {
    m.nodes().all(|(node, segs)| cfg.is_leaf(node) && segs.len() <= cfg.node_threshold as usize)
}

#[test]
fn quiescence_leaves_at_most_threshold_per_path() {
    let dir = tempfile::tempdir().unwrap();
    let mut o = StoreOptions::new("w");
    o.flush_threshold = 16 << 10;
    let mut w = StoreHandle::open(dir.path(), o).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..20_000 {
        w.put(&key(rng.random_range(0..3000)), &[1u8; 40]).unwrap();
    }
    w.flush().unwrap();
    let mut mgr = CompactionManager::start(dir.path(), ManagerConfig::default()).unwrap();
    mgr.run_until_quiescent(true).unwrap();
    let m = Catalog::new(dir.path()).load().unwrap();
    let cfg = m.layout.tree;
    assert!(leaf_bound_holds(&m, &cfg));
    assert!(m.segment_count() as u64 <= capacity(&cfg));
    for (node, seg) in m.segments() {
        let r = tenantkv_store::segment::SegmentReader::open(dir.path(), &seg.id).unwrap();
        for rec in r.iter() {
            assert_eq!(&cfg.leaf_of(&rec.unwrap().key), node);
        }
    }
}

#[derive(Debug, Clone)]
enum Op {
    Put(usize, u64, u32),
    Delete(usize, u64),
    Flush(usize),
    Compact(bool),
    StrongGet(usize, u64),
}

fn random_ops(seed: u64, n: usize, handles: usize, keys: u64) -> Vec<Op> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| match rng.random_range(0..100) {
            0..=54 => Op::Put(rng.random_range(0..handles), rng.random_range(0..keys), i as u32),
            55..=74 => Op::Delete(rng.random_range(0..handles), rng.random_range(0..keys)),
            75..=84 => Op::Flush(rng.random_range(0..handles)),
            85..=89 => Op::Compact(rng.random_bool(0.3)),
            _ => Op::StrongGet(rng.random_range(0..handles), rng.random_range(0..keys)),
        })
        .collect()
}

/// Apply `ops` to a store and to a reference map; every strong read and the
/// final contents must agree.
fn check_interleaving(seed: u64, ops: &[Op], handles: usize, keys: u64) {
    let dir = tempfile::tempdir().unwrap();
    let mut hs: Vec<StoreHandle> = (0..handles)
        .map(|h| {
            let mut o = StoreOptions::new(format!("h{h}"));
            o.flush_threshold = 2 << 10;
            o.background_flush = h % 2 == 0;
            o.refresh_interval = Duration::from_millis(1);
            StoreHandle::open(dir.path(), o).unwrap()
        })
        .collect();
    let mut mgr = CompactionManager::start(dir.path(), ManagerConfig::default()).unwrap();
    let mut model: BTreeMap<u64, Option<Vec<u8>>> = BTreeMap::new();
    for op in ops {
        match *op {
            Op::Put(h, k, v) => {
                let val = format!("{seed}-{v}").into_bytes();
                hs[h].put(&key(k), &val).unwrap();
                model.insert(k, Some(val));
            }
            Op::Delete(h, k) => {
                hs[h].delete(&key(k)).unwrap();
                model.insert(k, None);
            }
            Op::Flush(h) => hs[h].flush().unwrap(),
            Op::Compact(drain) => {
                mgr.run_once(drain).unwrap();
            }
            Op::StrongGet(h, k) => {
                let got = hs[h].get_with(&key(k), Consistency::Strong).unwrap();
                assert_eq!(got, model.get(&k).cloned().flatten(), "seed {seed} strong get of {k}");
            }
        }
    }
    for h in &mut hs {
        h.flush().unwrap();
    }
    mgr.run_until_quiescent(true).unwrap();
    let mut reader = StoreHandle::open(dir.path(), StoreOptions::new("check")).unwrap();
    for k in 0..keys {
        let want = model.get(&k).cloned().flatten();
        assert_eq!(reader.get(&key(k)).unwrap(), want, "seed {seed} key {k}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 16, ..ProptestConfig::default() })]

    #[test]
    fn randomized_interleavings_match_reference(seed in any::<u64>()) {
        let ops = random_ops(seed, 1000, 3, 60);
        check_interleaving(seed, &ops, 3, 60);
    }
}

#[test]
fn deleted_keys_do_not_resurrect_after_full_compaction() {
    let dir = tempfile::tempdir().unwrap();
    let mut w = StoreHandle::open(dir.path(), StoreOptions::new("w")).unwrap();
    for i in 0..200 {
        w.put(&key(i), b"v").unwrap();
    }
    w.flush().unwrap();
    let mut mgr = CompactionManager::start(dir.path(), ManagerConfig::default()).unwrap();
    mgr.run_until_quiescent(true).unwrap();
    for i in 0..200 {
        w.delete(&key(i)).unwrap();
    }
    w.flush().unwrap();
    for round in 0..4 {
        mgr.run_until_quiescent(true).unwrap();
        for i in 200..260 {
            w.put(&key(i), format!("{round}").as_bytes()).unwrap();
        }
        w.flush().unwrap();
    }
    w.close().unwrap();
    mgr.run_until_quiescent(true).unwrap();
    let mut r = StoreHandle::open(dir.path(), StoreOptions::new("r")).unwrap();
    for i in 0..200 {
        assert_eq!(r.get(&key(i)).unwrap(), None);
    }
}
