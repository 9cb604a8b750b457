use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant, SystemTime};

use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};
use crate::segment::{ImmutableSegment, SegmentId};

use super::lease::Lease;
use super::tree::{NodePath, TreeConfig};

pub const MANIFEST_FILE: &str = "MANIFEST.json";
pub const MANIFEST_LOCK: &str = "MANIFEST.lock";
pub const DEFAULT_COMMIT_RETRIES: usize = 16;
const STALE_LOCK_AGE: Duration = Duration::from_secs(5);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Tree,
    Size,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub strategy: Strategy,
    pub tree: TreeConfig,
    /// Segment count that triggers a size-based merge.
    pub size_threshold: u32,
}

impl Default for Layout {
    fn default() -> Self {
        Layout { strategy: Strategy::Tree, tree: TreeConfig::default(), size_threshold: 48 }
    }
}

impl Layout {
    pub fn size_based(size_threshold: u32) -> Self {
        Layout { strategy: Strategy::Size, size_threshold, ..Layout::default() }
    }

    pub fn validate(&self) -> Result<()> {
        self.tree.validate()?;
        if self.size_threshold < 2 {
            return Err(Error::InvalidConfig("size threshold must be at least 2".into()));
        }
        Ok(())
    }

    pub fn check_placement(&self, node: &NodePath) -> Result<()> {
        match (self.strategy, node) {
            (Strategy::Size, NodePath::Flat) => Ok(()),
            (Strategy::Size, _) => Err(Error::InvalidNodePath(format!(
                "{node} under the size strategy (only `flat` holds segments)"
            ))),
            (Strategy::Tree, _) => self.tree.check_placement(node),
        }
    }
}

/// One committed generation of the catalog. Snapshots are immutable once
/// handed out; refresh swaps in a whole new `Arc<Manifest>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    pub generation: u64,
    pub layout: Layout,
    nodes: BTreeMap<NodePath, Vec<ImmutableSegment>>,
}

/// Read-side name for a catalog snapshot.
pub type TreeIndex = Manifest;

#[derive(Serialize, Deserialize)]
struct ManifestDoc {
    generation: u64,
    #[serde(flatten)]
    layout: Layout,
    nodes: Vec<NodeDoc>,
}

#[derive(Serialize, Deserialize)]
struct NodeDoc {
    path: NodePath,
    segments: Vec<ImmutableSegment>,
}

impl Manifest {
    pub fn empty(layout: Layout) -> Self {
        Manifest { generation: 0, layout, nodes: BTreeMap::new() }
    }

    pub fn to_json(&self) -> String {
        let doc = ManifestDoc {
            generation: self.generation,
            layout: self.layout,
            nodes: self
                .nodes
                .iter()
                .filter(|(_, segs)| !segs.is_empty())
                .map(|(path, segs)| NodeDoc { path: path.clone(), segments: segs.clone() })
                .collect(),
        };
        serde_json::to_string_pretty(&doc).expect("manifest serializes")
    }

    pub fn from_json(text: &str) -> std::result::Result<Self, serde_json::Error> {
        let doc: ManifestDoc = serde_json::from_str(text)?;
        Ok(Manifest {
            generation: doc.generation,
            layout: doc.layout,
            nodes: doc.nodes.into_iter().map(|n| (n.path, n.segments)).collect(),
        })
    }

    /// Segments held at `node`, oldest publication first.
    pub fn segments_at(&self, node: &NodePath) -> &[ImmutableSegment] {
        self.nodes.get(node).map_or(&[], Vec::as_slice)
    }

    pub fn nodes(&self) -> impl Iterator<Item = (&NodePath, &[ImmutableSegment])> {
        self.nodes.iter().filter(|(_, s)| !s.is_empty()).map(|(p, s)| (p, s.as_slice()))
    }

    pub fn segment_count(&self) -> usize {
        self.nodes.values().map(Vec::len).sum()
    }

    pub fn segments(&self) -> impl Iterator<Item = (&NodePath, &ImmutableSegment)> {
        self.nodes.iter().flat_map(|(p, segs)| segs.iter().map(move |s| (p, s)))
    }

    pub fn node_of(&self, id: &SegmentId) -> Option<&NodePath> {
        self.segments().find(|(_, s)| &s.id == id).map(|(p, _)| p)
    }

    pub fn contains(&self, id: &SegmentId) -> bool {
        self.node_of(id).is_some()
    }

    /// Segments a read of `key` must consider, in visiting order (top-down,
    /// newest publication first within a node).
    pub fn read_candidates(&self, key: &[u8]) -> Vec<&ImmutableSegment> {
        match self.layout.strategy {
            Strategy::Size => self.segments_at(&NodePath::Flat).iter().rev().collect(),
            Strategy::Tree => self
                .layout
                .tree
                .path_of(key)
                .iter()
                .flat_map(|node| self.segments_at(node).iter().rev())
                .collect(),
        }
    }

    /// Check the structural invariants: root empty, every placement valid
    /// under the layout, no segment listed twice.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for (path, segs) in &self.nodes {
            if segs.is_empty() {
                continue;
            }
            self.layout.check_placement(path)?;
            for s in segs {
                if !seen.insert(&s.id) {
                    return Err(Error::InvalidConfig(format!("segment {} listed twice", s.id)));
                }
            }
        }
        Ok(())
    }

    fn insert(&mut self, meta: ImmutableSegment, node: NodePath) -> Result<()> {
        self.layout.check_placement(&node)?;
        if self.contains(&meta.id) {
            return Err(Error::InvalidConfig(format!("segment {} already published", meta.id)));
        }
        self.nodes.entry(node).or_default().push(meta);
        Ok(())
    }

    fn remove(&mut self, ids: &[SegmentId]) -> Result<Vec<ImmutableSegment>> {
        let wanted: HashSet<&SegmentId> = ids.iter().collect();
        let mut removed = Vec::new();
        for segs in self.nodes.values_mut() {
            let (gone, keep): (Vec<_>, Vec<_>) = segs.drain(..).partition(|s| wanted.contains(&s.id));
            *segs = keep;
            removed.extend(gone);
        }
        self.nodes.retain(|_, s| !s.is_empty());
        if removed.len() != wanted.len() {
            let present: HashSet<_> = removed.iter().map(|s| &s.id).collect();
            let missing = ids.iter().find(|id| !present.contains(id)).expect("some id is missing");
            return Err(Error::SegmentGone(missing.to_string()));
        }
        Ok(removed)
    }
}

/// Multi-process access to `MANIFEST.json` in a store root.
///
/// Commits are serialized by an exclusively created `MANIFEST.lock`; the new
/// generation is written to `MANIFEST.json.tmp.<pid>`, synced and renamed over
/// the manifest, so readers only ever observe whole generations.
#[derive(Debug, Clone)]
pub struct Catalog {
    root: PathBuf,
    max_retries: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum FailPoint {
    None,
    /// Temp file written, rename skipped (simulated crash).
    BeforeRename,
}

impl Catalog {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Catalog { root: root.into(), max_retries: DEFAULT_COMMIT_RETRIES }
    }

    pub fn with_retries(mut self, retries: usize) -> Self {
        self.max_retries = retries.max(1);
        self
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.root.join(MANIFEST_FILE)
    }

    /// Create generation 0 with `layout` unless a manifest already exists,
    /// in which case the stored one is returned.
    pub fn init(&self, layout: Layout) -> Result<Manifest> {
        layout.validate()?;
        fs::create_dir_all(&self.root).at(&self.root)?;
        if let Some(existing) = self.try_load()? {
            return Ok(existing);
        }
        let _guard = self.lock()?;
        if let Some(existing) = self.try_load()? {
            return Ok(existing);
        }
        let manifest = Manifest::empty(layout);
        self.write(&manifest, FailPoint::None)?;
        Ok(manifest)
    }

    pub fn load(&self) -> Result<Manifest> {
        self.try_load()?.ok_or_else(|| {
            Error::io(self.manifest_path(), std::io::Error::from(std::io::ErrorKind::NotFound))
        })
    }

    fn try_load(&self) -> Result<Option<Manifest>> {
        let path = self.manifest_path();
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(Error::io(&path, e)),
        };
        Manifest::from_json(&text).map(Some).map_err(|source| Error::Json { path, source })
    }

    pub fn publish(&self, meta: ImmutableSegment, node: NodePath) -> Result<u64> {
        self.publish_many(vec![(meta, node)])
    }

    /// Publish several segments in a single generation.
    pub fn publish_many(&self, placements: Vec<(ImmutableSegment, NodePath)>) -> Result<u64> {
        self.commit(FailPoint::None, |m| {
            for (meta, node) in placements.iter().cloned() {
                m.insert(meta, node)?;
            }
            Ok(())
        })
    }

    /// Atomically replace `old` segments by `new` ones; old files are unlinked
    /// only after the swap is committed. The lease is checked before and after
    /// taking the commit lock.
    pub fn retire(
        &self,
        lease: &Lease,
        old: &[SegmentId],
        new: Vec<(ImmutableSegment, NodePath)>,
    ) -> Result<u64> {
        lease.check()?;
        let generation = self.commit(FailPoint::None, |m| {
            lease.check()?;
            m.remove(old)?;
            for (meta, node) in new.iter().cloned() {
                m.insert(meta, node)?;
            }
            Ok(())
        })?;
        for id in old {
            for file in [id.segment_file(), id.bloom_file()] {
                let path = self.root.join(file);
                if let Err(e) = fs::remove_file(&path) {
                    if e.kind() != std::io::ErrorKind::NotFound {
                        log::warn!("could not unlink retired {}: {e}", path.display());
                    }
                }
            }
        }
        Ok(generation)
    }

    pub(crate) fn commit(
        &self,
        fail: FailPoint,
        mut edit: impl FnMut(&mut Manifest) -> Result<()>,
    ) -> Result<u64> {
        let _guard = self.lock()?;
        let mut manifest = self.load()?;
        edit(&mut manifest)?;
        manifest.generation += 1;
        manifest.validate()?;
        self.write(&manifest, fail)?;
        Ok(manifest.generation)
    }

    fn write(&self, manifest: &Manifest, fail: FailPoint) -> Result<()> {
        let tmp = self.root.join(format!("{MANIFEST_FILE}.tmp.{}", std::process::id()));
        {
            let mut f = File::create(&tmp).at(&tmp)?;
            f.write_all(manifest.to_json().as_bytes()).at(&tmp)?;
            f.sync_all().at(&tmp)?;
        }
        if fail == FailPoint::BeforeRename {
            return Err(Error::io(&tmp, std::io::Error::other("injected crash before rename")));
        }
        let target = self.manifest_path();
        fs::rename(&tmp, &target).at(&target)?;
        crate::segment::sync_dir(&self.root)
    }

    fn lock(&self) -> Result<LockGuard> {
        let path = self.root.join(MANIFEST_LOCK);
        let mut backoff = Duration::from_millis(1);
        for attempt in 0..self.max_retries {
            match OpenOptions::new().write(true).create_new(true).open(&path) {
                Ok(mut f) => {
                    let _ = writeln!(f, "{}", std::process::id());
                    return Ok(LockGuard { path });
                }
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                    if lock_is_stale(&path) {
                        log::warn!("breaking stale manifest lock {}", path.display());
                        let _ = fs::remove_file(&path);
                        continue;
                    }
                    std::thread::sleep(backoff + jitter(attempt));
                    backoff = (backoff * 2).min(Duration::from_millis(64));
                }
                Err(e) => return Err(Error::io(&path, e)),
            }
        }
        Err(Error::CatalogContention(self.max_retries))
    }
}

fn lock_is_stale(path: &Path) -> bool {
    fs::metadata(path)
        .and_then(|m| m.modified())
        .ok()
        .and_then(|t| SystemTime::now().duration_since(t).ok())
        .is_some_and(|age| age > STALE_LOCK_AGE)
}

fn jitter(attempt: usize) -> Duration {
    let nanos = SystemTime::now()
        .duration_since(SystemTime::UNIX_EPOCH)
        .map(|d| d.subsec_nanos())
        .unwrap_or(0);
    let mix = (nanos as u64 ^ u64::from(std::process::id()) ^ attempt as u64) % 1000;
    Duration::from_micros(mix)
}

struct LockGuard {
    path: PathBuf,
}

impl Drop for LockGuard {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// A reader's cached view of the catalog with interval-based refresh.
#[derive(Debug)]
pub struct CatalogView {
    catalog: Catalog,
    interval: Duration,
    current: Arc<Manifest>,
    loaded_at: Instant,
    failed_refreshes: u64,
}

impl CatalogView {
    pub fn open(catalog: Catalog, interval: Duration) -> Result<Self> {
        let current = Arc::new(catalog.load()?);
        Ok(CatalogView { catalog, interval, current, loaded_at: Instant::now(), failed_refreshes: 0 })
    }

    pub fn snapshot(&self) -> Arc<Manifest> {
        Arc::clone(&self.current)
    }

    pub fn interval(&self) -> Duration {
        self.interval
    }

    pub fn age(&self) -> Duration {
        self.loaded_at.elapsed()
    }

    /// Number of refresh attempts that failed since the last good one; the
    /// prior snapshot stays in use meanwhile.
    pub fn staleness(&self) -> u64 {
        self.failed_refreshes
    }

    /// Reload now. An unreadable manifest keeps the prior snapshot.
    pub fn refresh(&mut self) -> Arc<Manifest> {
        match self.catalog.load() {
            Ok(m) => {
                if m.generation != self.current.generation {
                    self.current = Arc::new(m);
                }
                self.failed_refreshes = 0;
                self.loaded_at = Instant::now();
            }
            Err(e) => {
                self.failed_refreshes += 1;
                log::warn!("catalog refresh failed ({} in a row): {e}", self.failed_refreshes);
            }
        }
        self.snapshot()
    }

    /// Reload if the snapshot is older than the refresh interval.
    pub fn maybe_refresh(&mut self) -> Arc<Manifest> {
        if self.loaded_at.elapsed() >= self.interval {
            self.refresh()
        } else {
            self.snapshot()
        }
    }
}

/// Per-node segment counts, handy for generation diffs in tests and reports.
pub fn node_counts(m: &Manifest) -> HashMap<NodePath, usize> {
    m.nodes().map(|(p, s)| (p.clone(), s.len())).collect()
}
