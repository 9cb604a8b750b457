use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fs::File;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::catalog::{route, NodePath};
use crate::error::{Error, Result};
use crate::record::{self, Record};
use crate::segment::{write_sorted, ImmutableSegment, SegmentId, SegmentIter, SegmentReader, LIVE_EXT};

use super::{resolve, TaskFile};

/// Durable outputs of a task and where each one goes in the tree.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TaskOutput {
    pub outputs: Vec<(ImmutableSegment, NodePath)>,
    pub records_in: u64,
    pub records_out: u64,
}

struct HeapItem {
    rec: Record,
    src: usize,
}

impl PartialEq for HeapItem {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for HeapItem {}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for HeapItem {
    // Reversed: BinaryHeap is a max-heap and we pop in storage order.
    fn cmp(&self, other: &Self) -> Ordering {
        other.rec.storage_cmp(&self.rec).then_with(|| other.src.cmp(&self.src))
    }
}

/// Run a task: k-way merge the inputs, keep one version per key, route the
/// survivors to the target nodes and write one segment per non-empty target.
/// Nothing is published; the caller retires the inputs.
pub fn execute(file: &TaskFile) -> Result<TaskOutput> {
    let task = &file.task;
    let readers = task
        .inputs
        .iter()
        .map(|id| SegmentReader::open(&file.root, id))
        .collect::<Result<Vec<_>>>()?;
    let mut iters: Vec<SegmentIter<'_>> = readers.iter().map(SegmentReader::iter).collect();
    let mut heap = BinaryHeap::new();
    for (src, it) in iters.iter_mut().enumerate() {
        if let Some(rec) = it.next() {
            heap.push(HeapItem { rec: rec?, src });
        }
    }

    let route_level = task.targets.first().map_or(1, |t| t.depth() as u32);
    let mut buckets: Vec<Vec<Record>> = vec![Vec::new(); task.targets.len().max(1)];
    let mut out = TaskOutput::default();
    let mut group: Vec<Record> = Vec::new();

    let mut emit = |group: &mut Vec<Record>, out: &mut TaskOutput| {
        if group.is_empty() {
            return;
        }
        let newest_ts = group.iter().map(|r| r.timestamp).max().unwrap_or(0);
        let drop_ok = task.leaf_final && newest_ts < task.tombstone_horizon;
        if let Some(rec) = resolve(group, drop_ok) {
            let slot = if buckets.len() == 1 {
                0
            } else {
                route(&rec.key, &file.tree, route_level) as usize
            };
            buckets[slot].push(rec);
            out.records_out += 1;
        }
        group.clear();
    };

    while let Some(HeapItem { rec, src }) = heap.pop() {
        out.records_in += 1;
        if let Some(next) = iters[src].next() {
            heap.push(HeapItem { rec: next?, src });
        }
        if group.last().is_some_and(|g| g.key != rec.key) {
            emit(&mut group, &mut out);
        }
        group.push(rec);
    }
    emit(&mut group, &mut out);

    let mut seq = file.output_seq_start;
    for (slot, records) in buckets.into_iter().enumerate() {
        if records.is_empty() {
            continue;
        }
        let id = SegmentId::new(&file.output_writer, seq)?;
        seq += 1;
        if let Some(meta) = write_sorted(&file.output_dir, id, records, file.fp_rate)? {
            let node = task.targets.get(slot).cloned().unwrap_or_else(|| task.source.clone());
            out.outputs.push((meta, node));
        }
    }
    Ok(out)
}

/// Timestamp below which no unflushed write can exist: the smallest first
/// timestamp over all live logs in `root`, capped at one second before now.
/// Called before the catalog snapshot the plan is based on is loaded.
pub fn tombstone_horizon(root: &Path) -> Result<u64> {
    let mut horizon = record::wall_clock_micros().saturating_sub(1_000_000);
    let entries = std::fs::read_dir(root).map_err(|e| Error::io(root, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(root, e))?;
        let path = entry.path();
        if path.extension().and_then(|e| e.to_str()) != Some(LIVE_EXT) {
            continue;
        }
        if let Some(ts) = first_timestamp(&path)? {
            horizon = horizon.min(ts);
        }
    }
    Ok(horizon)
}

fn first_timestamp(path: &Path) -> Result<Option<u64>> {
    let mut f = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(Error::io(path, e)),
    };
    let mut len = [0u8; 4];
    if f.read_exact(&mut len).is_err() {
        return Ok(None);
    }
    let mut rest = vec![0u8; u32::from_le_bytes(len) as usize + 8];
    if f.read_exact(&mut rest).is_err() {
        return Ok(None);
    }
    let ts = u64::from_le_bytes(rest[rest.len() - 8..].try_into().expect("8 bytes"));
    Ok(Some(ts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::TreeConfig;
    use crate::compaction::{CompactionTask, TaskKind};

    fn seg(dir: &Path, seq: u64, recs: Vec<Record>) -> SegmentId {
        let id = SegmentId::new("t", seq).unwrap();
        let mut recs = recs;
        recs.sort_by(Record::storage_cmp);
        write_sorted(dir, id.clone(), recs, 0.01).unwrap().unwrap();
        id
    }

    fn file(dir: &Path, kind: TaskKind, inputs: Vec<SegmentId>, source: &str, targets: Vec<NodePath>) -> TaskFile {
        TaskFile {
            task: CompactionTask {
                kind,
                source: source.parse().unwrap(),
                inputs,
                targets,
                leaf_final: true,
                tombstone_horizon: u64::MAX,
                worker: None,
            },
            root: dir.to_path_buf(),
            output_dir: dir.to_path_buf(),
            tree: TreeConfig::default(),
            output_writer: "out".into(),
            output_seq_start: 1,
            fp_rate: 0.01,
        }
    }

    fn all_records(dir: &Path, meta: &ImmutableSegment) -> Vec<Record> {
        let r = SegmentReader::open(dir, &meta.id).unwrap();
        r.iter().collect::<Result<Vec<_>>>().unwrap()
    }

    #[test]
    fn disjoint_merge_keeps_everything() {
        let dir = tempfile::tempdir().unwrap();
        let ids: Vec<_> = (0..3)
            .map(|s| seg(dir.path(), s, (0..10).map(|i| Record::put(format!("k{s}-{i}"), "v", 1)).collect()))
            .collect();
        let leaf: NodePath = "root/1/1".parse().unwrap();
        let out = execute(&file(dir.path(), TaskKind::MergeLeaf, ids, "root/1/1", vec![leaf])).unwrap();
        assert_eq!(out.outputs.len(), 1);
        assert_eq!(out.outputs[0].0.records, 30);
    }

    #[test]
    fn versions_collapse_to_newest() {
        let dir = tempfile::tempdir().unwrap();
        let ids: Vec<_> = (1..=3)
            .map(|ts| seg(dir.path(), ts, vec![Record::put("k", format!("v{ts}"), ts)]))
            .collect();
        let leaf: NodePath = "root/0/0".parse().unwrap();
        let out = execute(&file(dir.path(), TaskKind::MergeLeaf, ids, "root/0/0", vec![leaf])).unwrap();
        let recs = all_records(dir.path(), &out.outputs[0].0);
        assert_eq!(recs, vec![Record::put("k", "v3", 3)]);
    }

    #[test]
    fn tombstones_dropped_only_below_horizon() {
        let dir = tempfile::tempdir().unwrap();
        let a = seg(dir.path(), 1, vec![Record::put("a", "1", 1), Record::put("b", "1", 1)]);
        let b = seg(dir.path(), 2, vec![Record::tombstone("a", 5), Record::tombstone("b", 50)]);
        let leaf: NodePath = "root/0/0".parse().unwrap();
        let mut f = file(dir.path(), TaskKind::MergeLeaf, vec![a, b], "root/0/0", vec![leaf]);
        f.task.tombstone_horizon = 10;
        let out = execute(&f).unwrap();
        let recs = all_records(dir.path(), &out.outputs[0].0);
        assert_eq!(recs, vec![Record::tombstone("b", 50)]);
    }

    #[test]
    fn push_down_routes_by_next_level() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = TreeConfig::default();
        let keys: Vec<String> = (0..400).map(|i| format!("user{:016}", i * 7919)).collect();
        let node = cfg.path_of(keys[0].as_bytes())[0].clone();
        let mine: Vec<_> = keys.iter().filter(|k| cfg.path_of(k.as_bytes())[0] == node).collect();
        let id = seg(dir.path(), 1, mine.iter().map(|k| Record::put(k.as_bytes().to_vec(), "v", 1)).collect());
        let f = file(dir.path(), TaskKind::PushDown, vec![id], &node.to_string(), cfg.children(&node));
        let out = execute(&f).unwrap();
        assert!(out.outputs.len() > 1);
        let mut total = 0;
        for (meta, target) in &out.outputs {
            for rec in all_records(dir.path(), meta) {
                assert_eq!(&cfg.leaf_of(&rec.key), target);
                total += 1;
            }
        }
        assert_eq!(total, mine.len());
    }

    #[test]
    fn missing_input_is_segment_gone() {
        let dir = tempfile::tempdir().unwrap();
        let ghost = SegmentId::new("t", 99).unwrap();
        let leaf: NodePath = "root/0/0".parse().unwrap();
        let err = execute(&file(dir.path(), TaskKind::MergeLeaf, vec![ghost], "root/0/0", vec![leaf])).unwrap_err();
        assert!(err.is_segment_gone());
    }

    #[test]
    fn horizon_tracks_oldest_live_log() {
        let dir = tempfile::tempdir().unwrap();
        let mut w = crate::segment::WriteSegment::create(dir.path(), SegmentId::new("w", 1).unwrap(), 1 << 20).unwrap();
        assert!(tombstone_horizon(dir.path()).unwrap() > 1000);
        w.append(Record::put("k", "v", 1000)).unwrap();
        w.append(Record::put("k", "v", 2000)).unwrap();
        assert_eq!(tombstone_horizon(dir.path()).unwrap(), 1000);
    }
}
