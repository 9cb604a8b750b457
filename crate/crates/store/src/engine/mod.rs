//! The client-facing store handle and the per-tenant cache.

mod cache;
mod flush;

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::AtomicU64;
use std::sync::{mpsc, Arc};
use std::thread::JoinHandle;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::bloom::DEFAULT_FP_RATE;
use crate::catalog::{Catalog, CatalogView, Layout, Manifest};
use crate::compaction::OUTPUT_WRITER;
use crate::error::{Error, IoContext, Result};
use crate::record::{self, Record};
use crate::segment::{
    max_seq_in_dir, validate_writer_id, SealedSegment, SegmentId, SegmentReader, WriteSegment, LIVE_EXT,
};

pub use cache::{TenantCache, TenantCacheStats, TenantId};
pub use flush::publish_sealed;

pub const DEFAULT_FLUSH_THRESHOLD: u64 = 4 << 20;
pub const DEFAULT_REFRESH_INTERVAL: Duration = Duration::from_millis(1000);
/// Environment variable naming the default store root.
pub const ROOT_ENV: &str = "TENANTKV_ROOT";
/// Failed catalog refreshes tolerated before reads log a staleness warning.
pub const STALENESS_WARN_AFTER: u64 = 3;
const GONE_RETRIES: usize = 8;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Consistency {
    #[default]
    Eventual,
    Strong,
}

#[derive(Debug, Clone)]
pub struct StoreOptions {
    pub writer_id: String,
    /// Layout used when the store root is created; an existing store keeps
    /// its own.
    pub layout: Layout,
    pub flush_threshold: u64,
    pub refresh_interval: Duration,
    pub consistency: Consistency,
    pub tenant: TenantId,
    pub cache: Option<Arc<TenantCache>>,
    pub fp_rate: f64,
    /// Consult bloom filters before searching a segment.
    pub use_bloom: bool,
    /// Flush on a background thread; otherwise flushes run inline.
    pub background_flush: bool,
    /// fsync the write log after every append.
    pub sync_appends: bool,
}

impl StoreOptions {
    pub fn new(writer_id: impl Into<String>) -> Self {
        StoreOptions {
            writer_id: writer_id.into(),
            layout: Layout::default(),
            flush_threshold: DEFAULT_FLUSH_THRESHOLD,
            refresh_interval: DEFAULT_REFRESH_INTERVAL,
            consistency: Consistency::Eventual,
            tenant: 0,
            cache: None,
            fp_rate: DEFAULT_FP_RATE,
            use_bloom: true,
            background_flush: true,
            sync_appends: false,
        }
    }
}

/// Default store root from `TENANTKV_ROOT`.
pub fn root_from_env() -> Option<PathBuf> {
    std::env::var_os(ROOT_ENV).map(PathBuf::from)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ReadStats {
    pub gets: u64,
    /// Answered from this handle's unflushed writes.
    pub local_hits: u64,
    pub cache_hits: u64,
    /// Candidate segments on the read path.
    pub segments_considered: u64,
    pub bloom_skips: u64,
    /// Segments actually searched after the bloom check.
    pub segments_searched: u64,
    pub found: u64,
    /// Reads whose newest version was a tombstone (reported as not found).
    pub tombstones: u64,
    pub not_found: u64,
    pub gone_retries: u64,
    pub live_logs_replayed: u64,
    pub stale_warnings: u64,
}

impl ReadStats {
    pub fn mean_segments_searched(&self) -> f64 {
        if self.gets == 0 {
            0.0
        } else {
            self.segments_searched as f64 / self.gets as f64
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum FlushState {
    InFlight,
    Failed,
}

struct Pending {
    sealed: Arc<SealedSegment>,
    state: FlushState,
}

struct Flusher {
    tx: Option<mpsc::Sender<Arc<SealedSegment>>>,
    done: mpsc::Receiver<(SegmentId, Result<()>)>,
    thread: Option<JoinHandle<()>>,
}

impl Flusher {
    fn spawn(root: PathBuf, catalog: Catalog, layout: Layout, writer: String, seq: Arc<AtomicU64>, fp: f64) -> Self {
        let (tx, rx) = mpsc::channel::<Arc<SealedSegment>>();
        let (done_tx, done) = mpsc::channel();
        let thread = std::thread::Builder::new()
            .name(format!("flush-{writer}"))
            .spawn(move || {
                for sealed in rx {
                    let res = publish_sealed(&root, &catalog, &layout, &sealed, &writer, &seq, fp).map(|_| ());
                    if done_tx.send((sealed.id.clone(), res)).is_err() {
                        break;
                    }
                }
            })
            .expect("spawn flush thread");
        Flusher { tx: Some(tx), done, thread: Some(thread) }
    }

    fn shutdown(&mut self) {
        self.tx.take();
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

/// A writer's handle on a store root. One operation at a time; any number
/// of handles, in any number of processes, may share the root.
pub struct StoreHandle {
    root: PathBuf,
    opts: StoreOptions,
    catalog: Catalog,
    layout: Layout,
    view: CatalogView,
    write: WriteSegment,
    seq: Arc<AtomicU64>,
    pending: Vec<Pending>,
    published: Vec<SegmentId>,
    flusher: Option<Flusher>,
    readers: HashMap<SegmentId, Arc<SegmentReader>>,
    seen_generation: u64,
    seen_segments: HashSet<SegmentId>,
    stats: ReadStats,
    closed: bool,
}

impl std::fmt::Debug for StoreHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StoreHandle")
            .field("root", &self.root)
            .field("writer", &self.opts.writer_id)
            .field("pending", &self.pending.len())
            .finish_non_exhaustive()
    }
}

impl StoreHandle {
    /// Open (creating if needed) the store at `root`. Logs left behind by an
    /// earlier handle with the same writer id are flushed first.
    pub fn open(root: impl Into<PathBuf>, opts: StoreOptions) -> Result<Self> {
        let root = root.into();
        validate_writer_id(&opts.writer_id)?;
        if opts.writer_id == OUTPUT_WRITER {
            return Err(Error::InvalidConfig(format!("writer id {OUTPUT_WRITER:?} is reserved")));
        }
        fs::create_dir_all(&root).at(&root)?;
        let catalog = Catalog::new(&root);
        let manifest = catalog.init(opts.layout)?;
        let layout = manifest.layout;
        let next = max_seq_in_dir(&root, &opts.writer_id)?.map_or(1, |s| s + 1);
        let seq = Arc::new(AtomicU64::new(next));

        for log in own_logs(&root, &opts.writer_id)? {
            let sealed = SealedSegment::from_log(WriteSegment::replay(&log)?)?;
            publish_sealed(&root, &catalog, &layout, &sealed, &opts.writer_id, &seq, opts.fp_rate)?;
        }

        let write = new_write_segment(&root, &opts, &seq)?;
        let view = CatalogView::open(catalog.clone(), opts.refresh_interval)?;
        let flusher = opts.background_flush.then(|| {
            Flusher::spawn(root.clone(), catalog.clone(), layout, opts.writer_id.clone(), Arc::clone(&seq), opts.fp_rate)
        });
        let snapshot = view.snapshot();
        Ok(StoreHandle {
            root,
            catalog,
            layout,
            view,
            write,
            seq,
            pending: Vec::new(),
            published: Vec::new(),
            flusher,
            readers: HashMap::new(),
            seen_generation: snapshot.generation,
            seen_segments: snapshot.segments().map(|(_, s)| s.id.clone()).collect(),
            stats: ReadStats::default(),
            closed: false,
            opts,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn options(&self) -> &StoreOptions {
        &self.opts
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn stats(&self) -> &ReadStats {
        &self.stats
    }

    pub fn reset_stats(&mut self) {
        self.stats = ReadStats::default();
    }

    pub fn snapshot(&self) -> Arc<Manifest> {
        self.view.snapshot()
    }

    pub fn catalog_staleness(&self) -> u64 {
        self.view.staleness()
    }

    /// Bytes in the current write segment.
    pub fn unflushed_bytes(&self) -> u64 {
        self.write.bytes_written()
    }

    /// Number of sealed segments not yet confirmed published.
    pub fn pending_flushes(&self) -> usize {
        self.pending.len()
    }

    fn ensure_open(&self) -> Result<()> {
        if self.closed {
            Err(Error::Closed)
        } else {
            Ok(())
        }
    }

    pub fn put(&mut self, key: &[u8], value: &[u8]) -> Result<()> {
        self.ensure_open()?;
        record::validate_value(value)?;
        self.append(Record::put(key, value, record::next_timestamp()))
    }

    pub fn delete(&mut self, key: &[u8]) -> Result<()> {
        self.ensure_open()?;
        self.append(Record::tombstone(key, record::next_timestamp()))
    }

    fn append(&mut self, rec: Record) -> Result<()> {
        record::validate_key(&rec.key)?;
        self.absorb_completions();
        if let Some(cache) = &self.opts.cache {
            cache.invalidate(self.opts.tenant, &rec.key);
        }
        self.write.append(rec)?;
        if self.write.needs_flush() {
            self.rotate()?;
        }
        Ok(())
    }

    /// Seal the current write segment and hand it to the flusher; a fresh
    /// write segment takes new appends immediately.
    fn rotate(&mut self) -> Result<()> {
        if self.write.is_empty() {
            return Ok(());
        }
        let fresh = new_write_segment(&self.root, &self.opts, &self.seq)?;
        let mut old = std::mem::replace(&mut self.write, fresh);
        let sealed = Arc::new(old.seal()?);
        self.pending.push(Pending { sealed: Arc::clone(&sealed), state: FlushState::InFlight });
        self.submit(sealed);
        Ok(())
    }

    fn submit(&mut self, sealed: Arc<SealedSegment>) {
        match &self.flusher {
            Some(f) => {
                f.tx.as_ref().expect("flusher running").send(sealed).expect("flush thread alive");
            }
            None => {
                let res = publish_sealed(
                    &self.root,
                    &self.catalog,
                    &self.layout,
                    &sealed,
                    &self.opts.writer_id,
                    &self.seq,
                    self.opts.fp_rate,
                )
                .map(|_| ());
                self.complete(sealed.id.clone(), res);
            }
        }
    }

    fn complete(&mut self, id: SegmentId, res: Result<()>) {
        match res {
            Ok(()) => self.published.push(id),
            Err(e) => {
                log::error!("flush of {id} failed: {e}");
                if let Some(p) = self.pending.iter_mut().find(|p| p.sealed.id == id) {
                    p.state = FlushState::Failed;
                }
            }
        }
    }

    /// Collect finished flushes. Sealed segments stay readable from memory
    /// until a catalog refresh that includes their output succeeds.
    fn absorb_completions(&mut self) {
        if let Some(f) = &self.flusher {
            let done: Vec<_> = f.done.try_iter().collect();
            for (id, res) in done {
                self.complete(id, res);
            }
        }
        if !self.published.is_empty() {
            let snapshot = self.view.refresh();
            self.observe(&snapshot);
            if self.view.staleness() == 0 {
                let published: HashSet<_> = self.published.drain(..).collect();
                self.pending.retain(|p| !published.contains(&p.sealed.id));
            }
        }
    }

    /// Flush everything written so far and wait until it is published.
    pub fn flush(&mut self) -> Result<()> {
        self.ensure_open()?;
        self.rotate()?;
        let retry: Vec<_> = self
            .pending
            .iter_mut()
            .filter(|p| p.state == FlushState::Failed)
            .map(|p| {
                p.state = FlushState::InFlight;
                Arc::clone(&p.sealed)
            })
            .collect();
        for sealed in retry {
            self.submit(sealed);
        }
        self.wait_for_flushes()
    }

    fn wait_for_flushes(&mut self) -> Result<()> {
        loop {
            let in_flight = self.pending.iter().filter(|p| p.state == FlushState::InFlight).count();
            let waiting = self.published.len();
            if in_flight <= waiting {
                break;
            }
            let Some(f) = &self.flusher else { break };
            match f.done.recv() {
                Ok((id, res)) => self.complete(id, res),
                Err(_) => break,
            }
        }
        self.absorb_completions();
        match self.pending.iter().find(|p| p.state == FlushState::Failed) {
            Some(p) => Err(Error::io(
                &p.sealed.log_path,
                std::io::Error::other("flush failed; log kept for recovery"),
            )),
            None => Ok(()),
        }
    }

    /// Flush, stop the flusher and release the write log. Further calls fail
    /// with "store closed".
    pub fn close(&mut self) -> Result<()> {
        if self.closed {
            return Ok(());
        }
        let res = self.flush();
        if let Some(f) = &mut self.flusher {
            f.shutdown();
        }
        self.closed = true;
        res?;
        if self.write.is_empty() {
            let _ = fs::remove_file(self.write.path());
        }
        Ok(())
    }

    /// Force a catalog reload.
    pub fn refresh(&mut self) -> Arc<Manifest> {
        let snapshot = self.view.refresh();
        self.observe(&snapshot);
        snapshot
    }

    fn current_snapshot(&mut self) -> Arc<Manifest> {
        let snapshot = self.view.maybe_refresh();
        self.observe(&snapshot);
        if self.view.staleness() >= STALENESS_WARN_AFTER {
            self.stats.stale_warnings += 1;
            log::warn!(
                "catalog snapshot is stale ({} failed refreshes); serving generation {}",
                self.view.staleness(),
                snapshot.generation
            );
        }
        snapshot
    }

    /// Track generation changes: drop readers of retired segments, and clear
    /// this tenant's cache when another writer published new data.
    fn observe(&mut self, snapshot: &Manifest) {
        if snapshot.generation == self.seen_generation {
            return;
        }
        let ids: HashSet<SegmentId> = snapshot.segments().map(|(_, s)| s.id.clone()).collect();
        let foreign_flush = ids.iter().any(|id| {
            !self.seen_segments.contains(id) && id.writer() != OUTPUT_WRITER && id.writer() != self.opts.writer_id
        });
        if foreign_flush {
            if let Some(cache) = &self.opts.cache {
                cache.clear_tenant(self.opts.tenant);
            }
        }
        self.readers.retain(|id, _| ids.contains(id));
        self.seen_segments = ids;
        self.seen_generation = snapshot.generation;
    }

    fn reader(&mut self, id: &SegmentId) -> Result<Arc<SegmentReader>> {
        if let Some(r) = self.readers.get(id) {
            return Ok(Arc::clone(r));
        }
        let r = Arc::new(SegmentReader::open(&self.root, id)?);
        self.readers.insert(id.clone(), Arc::clone(&r));
        Ok(r)
    }

    pub fn get(&mut self, key: &[u8]) -> Result<Option<Vec<u8>>> {
        self.get_with(key, self.opts.consistency)
    }

    pub fn get_with(&mut self, key: &[u8], mode: Consistency) -> Result<Option<Vec<u8>>> {
        self.ensure_open()?;
        record::validate_key(key)?;
        self.absorb_completions();
        self.stats.gets += 1;

        let mut best: Option<Record> = self.local_latest(key);
        let local = best.is_some();
        if local {
            self.stats.local_hits += 1;
        }

        if mode == Consistency::Strong {
            // Logs first, then the catalog: a log that disappears in between
            // has been published and the refresh below sees it.
            for rec in self.foreign_live_versions(key)? {
                keep_newer(&mut best, rec);
            }
            self.refresh();
        } else if !local {
            if let Some(cache) = &self.opts.cache {
                if let Some(v) = cache.get(self.opts.tenant, key) {
                    self.stats.cache_hits += 1;
                    self.stats.found += 1;
                    return Ok(Some(v));
                }
            }
        }

        let from_segments = self.search_segments(key)?;
        let segment_hit = from_segments.clone();
        if let Some(rec) = from_segments {
            keep_newer(&mut best, rec);
        }

        match best {
            Some(rec) if rec.is_tombstone() => {
                self.stats.tombstones += 1;
                Ok(None)
            }
            Some(rec) => {
                self.stats.found += 1;
                let value = rec.value.expect("live record has a value");
                if let (Some(cache), Some(seg)) = (&self.opts.cache, segment_hit) {
                    if mode == Consistency::Eventual && !local && seg.timestamp == rec.timestamp {
                        cache.insert(self.opts.tenant, key, &value);
                    }
                }
                Ok(Some(value))
            }
            None => {
                self.stats.not_found += 1;
                Ok(None)
            }
        }
    }

    fn local_latest(&self, key: &[u8]) -> Option<Record> {
        let mut best = self.write.latest(key).cloned();
        for p in &self.pending {
            if let Some(rec) = p.sealed.latest(key) {
                keep_newer(&mut best, rec.clone());
            }
        }
        best
    }

    fn foreign_live_versions(&mut self, key: &[u8]) -> Result<Vec<Record>> {
        let own: HashSet<String> = std::iter::once(self.write.id().live_file())
            .chain(self.pending.iter().map(|p| p.sealed.id.live_file()))
            .collect();
        let mut out = Vec::new();
        let entries = fs::read_dir(&self.root).at(&self.root)?;
        for entry in entries {
            let path = entry.at(&self.root)?.path();
            if path.extension().and_then(|e| e.to_str()) != Some(LIVE_EXT) {
                continue;
            }
            let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
            if own.contains(name) {
                continue;
            }
            match WriteSegment::replay(&path) {
                Ok(log) => {
                    self.stats.live_logs_replayed += 1;
                    out.extend(log.latest(key).cloned());
                }
                Err(e) if e.is_segment_gone() => {}
                Err(e) => return Err(e),
            }
        }
        Ok(out)
    }

    /// Newest version of `key` among catalogued segments on its read path.
    fn search_segments(&mut self, key: &[u8]) -> Result<Option<Record>> {
        let mut last_err = None;
        for _ in 0..GONE_RETRIES {
            let snapshot = self.current_snapshot();
            match self.search_snapshot(&snapshot, key) {
                Ok(found) => return Ok(found),
                Err(e) if e.is_segment_gone() => {
                    self.stats.gone_retries += 1;
                    self.refresh();
                    last_err = Some(e);
                }
                Err(e) => return Err(e),
            }
        }
        Err(last_err.expect("loop ran"))
    }

    fn search_snapshot(&mut self, snapshot: &Manifest, key: &[u8]) -> Result<Option<Record>> {
        let mut best = None;
        for meta in snapshot.read_candidates(key) {
            self.stats.segments_considered += 1;
            let reader = self.reader(&meta.id)?;
            if self.opts.use_bloom && !reader.bloom().may_contain(key) {
                self.stats.bloom_skips += 1;
                continue;
            }
            self.stats.segments_searched += 1;
            if let Some(rec) = reader.get(key)?.into_iter().next() {
                keep_newer(&mut best, rec);
            }
        }
        Ok(best)
    }
}

impl Drop for StoreHandle {
    fn drop(&mut self) {
        if let Err(e) = self.close() {
            log::warn!("closing store handle {}: {e}", self.opts.writer_id);
        }
    }
}

fn keep_newer(best: &mut Option<Record>, rec: Record) {
    if best.as_ref().is_none_or(|b| rec.supersedes(b)) {
        *best = Some(rec);
    }
}

fn new_write_segment(root: &Path, opts: &StoreOptions, seq: &AtomicU64) -> Result<WriteSegment> {
    let n = seq.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
    let id = SegmentId::new(&opts.writer_id, n)?;
    let mut w = WriteSegment::create(root, id, opts.flush_threshold)?;
    w.set_sync_appends(opts.sync_appends);
    Ok(w)
}

fn own_logs(root: &Path, writer: &str) -> Result<Vec<PathBuf>> {
    let mut logs = Vec::new();
    for entry in fs::read_dir(root).at(root)? {
        let path = entry.at(root)?.path();
        if path.extension().and_then(|e| e.to_str()) != Some(LIVE_EXT) {
            continue;
        }
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
        if SegmentId::parse(stem).is_some_and(|id| id.writer() == writer) {
            logs.push(path);
        }
    }
    logs.sort();
    Ok(logs)
}
