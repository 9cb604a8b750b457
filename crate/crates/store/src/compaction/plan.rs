use crate::catalog::{Manifest, NodePath, Strategy};

use super::{CompactionTask, TaskKind};

#[derive(Debug, Clone, Default)]
pub struct PlanOptions {
    pub node_threshold: usize,
    /// Push down every non-empty inner node regardless of threshold; used
    /// once ingest has stopped so the tree settles into its leaves.
    pub drain: bool,
    /// Nodes touched by in-flight tasks; anything overlapping them is skipped.
    pub busy: Vec<NodePath>,
}

fn overlaps(a: &NodePath, b: &NodePath) -> bool {
    a == b || a.is_ancestor_of(b) || b.is_ancestor_of(a)
}

/// Size-based plan: once the segment count reaches `threshold`, merge the
/// `count - threshold + 2` smallest segments into one.
pub fn plan_size_based(index: &Manifest, threshold: usize) -> Option<CompactionTask> {
    let mut segs: Vec<_> = index.segments().collect();
    let count = segs.len();
    if threshold < 2 || count < threshold {
        return None;
    }
    let pick = count - threshold + 2;
    segs.sort_by(|(_, a), (_, b)| a.bytes.cmp(&b.bytes).then_with(|| a.id.cmp(&b.id)));
    let inputs = segs[..pick].iter().map(|(_, s)| s.id.clone()).collect();
    let (source, targets) = match index.layout.strategy {
        Strategy::Size => (NodePath::Flat, vec![NodePath::Flat]),
        Strategy::Tree => (NodePath::root(), index.layout.tree.children(&NodePath::root())),
    };
    Some(CompactionTask {
        kind: TaskKind::SizeMerge,
        source,
        inputs,
        targets,
        leaf_final: pick == count,
        tombstone_horizon: 0,
        worker: None,
    })
}

pub fn plan_tree_based(index: &Manifest, node_threshold: usize) -> Vec<CompactionTask> {
    plan_tree_with(index, &PlanOptions { node_threshold, ..PlanOptions::default() })
}

/// Tree-based plan, top level first: an inner node over threshold is pushed
/// down to its children, a leaf over threshold is merged in place. A node is
/// never scheduled together with one of its ancestors or descendants.
pub fn plan_tree_with(index: &Manifest, opts: &PlanOptions) -> Vec<CompactionTask> {
    let tree = &index.layout.tree;
    let mut nodes: Vec<_> = index.nodes().filter(|(p, _)| matches!(p, NodePath::Tree(_))).collect();
    nodes.sort_by(|(a, _), (b, _)| a.depth().cmp(&b.depth()).then_with(|| a.cmp(b)));

    let mut blocked: Vec<NodePath> = opts.busy.clone();
    let mut tasks = Vec::new();
    for (path, segs) in nodes {
        if blocked.iter().any(|b| overlaps(b, path)) {
            continue;
        }
        let inputs = segs.iter().map(|s| s.id.clone()).collect();
        let task = if tree.is_leaf(path) {
            if segs.len() <= opts.node_threshold {
                continue;
            }
            let mut ancestor = path.parent();
            let mut ancestors_empty = true;
            while let Some(a) = ancestor {
                ancestors_empty &= index.segments_at(&a).is_empty();
                ancestor = a.parent();
            }
            CompactionTask {
                kind: TaskKind::MergeLeaf,
                source: path.clone(),
                inputs,
                targets: vec![path.clone()],
                leaf_final: ancestors_empty,
                tombstone_horizon: 0,
                worker: None,
            }
        } else {
            if segs.len() <= opts.node_threshold && !opts.drain {
                continue;
            }
            CompactionTask {
                kind: TaskKind::PushDown,
                source: path.clone(),
                inputs,
                targets: tree.children(path),
                leaf_final: false,
                tombstone_horizon: 0,
                worker: None,
            }
        };
        blocked.push(path.clone());
        tasks.push(task);
    }
    tasks
}
