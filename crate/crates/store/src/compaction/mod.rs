//! Size-based and tree-based compaction: planning, version resolution,
//! task execution and the lease-holding manager that runs workers.

mod execute;
mod manager;
mod plan;

use std::collections::HashSet;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::catalog::{NodePath, TreeConfig};
use crate::error::{Error, Result};
use crate::record::Record;
use crate::segment::SegmentId;

pub use execute::{execute, tombstone_horizon, TaskOutput};
pub use manager::{run_task_file, CompactionManager, CycleStats, ManagerConfig, WorkerMode, OUTPUT_WRITER};
pub use plan::{plan_size_based, plan_tree_based, plan_tree_with, PlanOptions};

pub const DEFAULT_WORKERS: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    MergeLeaf,
    PushDown,
    SizeMerge,
}

/// One unit of compaction work. Serialized as the task file handed to a
/// `compact-worker` process.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompactionTask {
    pub kind: TaskKind,
    /// Node the inputs are taken from.
    pub source: NodePath,
    pub inputs: Vec<SegmentId>,
    /// Nodes outputs may be placed in.
    pub targets: Vec<NodePath>,
    /// Tombstones may be dropped (subject to `tombstone_horizon`).
    pub leaf_final: bool,
    /// Only tombstones older than this timestamp are dropped; newer ones may
    /// still shadow versions in unflushed write segments.
    pub tombstone_horizon: u64,
    pub worker: Option<usize>,
}

/// Everything a worker process needs to run a task.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskFile {
    pub task: CompactionTask,
    pub root: PathBuf,
    pub output_dir: PathBuf,
    pub tree: TreeConfig,
    pub output_writer: String,
    pub output_seq_start: u64,
    pub fp_rate: f64,
}

/// Pick the surviving version among all versions of one key. `None` means
/// the key is dropped from the output.
pub fn resolve(versions: &[Record], leaf_final: bool) -> Option<Record> {
    let latest = versions.iter().reduce(|best, r| if r.supersedes(best) { r } else { best })?;
    if latest.is_tombstone() && leaf_final {
        None
    } else {
        Some(latest.clone())
    }
}

/// Round-robin assignment of tasks to `workers`: task `i` goes to worker
/// `i % workers`. Each worker runs its queue one task at a time. Fails if two
/// tasks share an input segment.
pub fn dispatch(tasks: Vec<CompactionTask>, workers: usize) -> Result<Vec<Vec<CompactionTask>>> {
    if workers == 0 {
        return Err(Error::InvalidConfig("worker pool must be non-empty".into()));
    }
    let mut seen = HashSet::new();
    for t in &tasks {
        for id in &t.inputs {
            if !seen.insert(id.clone()) {
                return Err(Error::OverlappingTasks(id.to_string()));
            }
        }
    }
    let mut queues = vec![Vec::new(); workers];
    for (i, mut t) in tasks.into_iter().enumerate() {
        t.worker = Some(i % workers);
        queues[i % workers].push(t);
    }
    Ok(queues)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn task(ids: &[&str]) -> CompactionTask {
        CompactionTask {
            kind: TaskKind::MergeLeaf,
            source: "root/0/0".parse().unwrap(),
            inputs: ids.iter().map(|s| SegmentId::parse(s).unwrap()).collect(),
            targets: vec!["root/0/0".parse().unwrap()],
            leaf_final: false,
            tombstone_horizon: 0,
            worker: None,
        }
    }

    #[test]
    fn resolve_examples() {
        let a5 = Record::put(b"k".to_vec(), b"5".to_vec(), 5);
        let a9 = Record::put(b"k".to_vec(), b"9".to_vec(), 9);
        assert_eq!(resolve(&[a5.clone()], true), Some(a5.clone()));
        assert_eq!(resolve(&[a5.clone(), a9.clone()], false), Some(a9.clone()));
        let t = Record::tombstone(b"k".to_vec(), 10);
        assert_eq!(resolve(&[a5.clone(), t.clone()], true), None);
        assert_eq!(resolve(&[a5, t.clone()], false), Some(t));
        assert_eq!(resolve(&[], true), None);
    }

    #[test]
    fn dispatch_round_robin() {
        let tasks: Vec<_> = (0..8).map(|i| task(&[&format!("w-{i}")])).collect();
        let q = dispatch(tasks, 3).unwrap();
        let seqs: Vec<Vec<u64>> =
            q.iter().map(|ts| ts.iter().map(|t| t.inputs[0].seq()).collect()).collect();
        assert_eq!(seqs, vec![vec![0, 3, 6], vec![1, 4, 7], vec![2, 5]]);
        assert_eq!(dispatch(vec![task(&["w-1"])], 6).unwrap()[0].len(), 1);
        assert!(dispatch(vec![], 6).unwrap().iter().all(Vec::is_empty));
    }

    #[test]
    fn dispatch_rejects_shared_inputs() {
        let err = dispatch(vec![task(&["w-1", "w-2"]), task(&["w-2"])], 2).unwrap_err();
        assert!(matches!(err, Error::OverlappingTasks(id) if id == "w-2"));
    }
}
