use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::mpsc;
use std::thread;
use std::time::{Duration, Instant};

use crate::bloom::DEFAULT_FP_RATE;
use crate::catalog::{Catalog, Lease, Manifest, NodePath, Strategy, DEFAULT_LEASE_TTL};
use crate::error::{Error, IoContext, Result};
use crate::segment::{max_seq_in_dir, SegmentId};

use super::execute::{execute, tombstone_horizon, TaskOutput};
use super::plan::{plan_size_based, plan_tree_with, PlanOptions};
use super::{CompactionTask, TaskFile, DEFAULT_WORKERS};

pub const OUTPUT_WRITER: &str = "compact";
const TASK_DIR: &str = "tasks";

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WorkerMode {
    /// Tasks run on threads of the manager process.
    InProcess,
    /// Tasks run as `<exe> compact-worker --task <file>` child processes,
    /// which print a JSON `TaskOutput` on stdout.
    ChildProcess { exe: PathBuf },
}

#[derive(Debug, Clone)]
pub struct ManagerConfig {
    pub holder: String,
    pub workers: usize,
    /// Pause between planning rounds when there is nothing to do.
    pub cycle: Duration,
    pub lease_ttl: Duration,
    pub fp_rate: f64,
    pub mode: WorkerMode,
}

impl Default for ManagerConfig {
    fn default() -> Self {
        ManagerConfig {
            holder: format!("manager-{}", std::process::id()),
            workers: DEFAULT_WORKERS,
            cycle: Duration::from_secs(5),
            lease_ttl: DEFAULT_LEASE_TTL,
            fp_rate: DEFAULT_FP_RATE,
            mode: WorkerMode::InProcess,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CycleStats {
    pub tasks_run: usize,
    pub tasks_aborted: usize,
    pub segments_in: usize,
    pub segments_out: usize,
    pub max_concurrent: usize,
    pub busy_time: Duration,
}

impl CycleStats {
    fn absorb(&mut self, other: &CycleStats) {
        self.tasks_run += other.tasks_run;
        self.tasks_aborted += other.tasks_aborted;
        self.segments_in += other.segments_in;
        self.segments_out += other.segments_out;
        self.max_concurrent = self.max_concurrent.max(other.max_concurrent);
        self.busy_time += other.busy_time;
    }
}

struct InFlight {
    task: CompactionTask,
    slot: usize,
}

/// The single lease-holding compaction manager of a store root.
pub struct CompactionManager {
    root: PathBuf,
    catalog: Catalog,
    lease: Lease,
    lease_renewed: Instant,
    config: ManagerConfig,
    next_seq: u64,
    total: CycleStats,
}

impl CompactionManager {
    pub fn start(root: impl Into<PathBuf>, config: ManagerConfig) -> Result<Self> {
        let root = root.into();
        if config.workers == 0 {
            return Err(Error::InvalidConfig("worker pool must be non-empty".into()));
        }
        let lease = Lease::acquire(&root, &config.holder, config.lease_ttl)?;
        let next_seq = max_seq_in_dir(&root, OUTPUT_WRITER)?.map_or(1, |s| s + 1);
        Ok(CompactionManager {
            catalog: Catalog::new(&root),
            root,
            lease,
            lease_renewed: Instant::now(),
            config,
            next_seq,
            total: CycleStats::default(),
        })
    }

    pub fn config(&self) -> &ManagerConfig {
        &self.config
    }

    pub fn stats(&self) -> &CycleStats {
        &self.total
    }

    pub fn release(self) -> Result<()> {
        self.lease.release()
    }

    /// Plan once and run that plan to completion; tasks beyond the pool size
    /// wait for a free worker.
    pub fn run_once(&mut self, drain: bool) -> Result<CycleStats> {
        self.drive(drain, false, &|| false)
    }

    /// Keep planning and running until a plan comes back empty with no task
    /// in flight.
    pub fn run_until_quiescent(&mut self, drain: bool) -> Result<CycleStats> {
        self.drive(drain, true, &|| false)
    }

    /// Background loop: compact as work appears, sleeping `cycle` when idle,
    /// until `stop` returns true.
    pub fn run_until(&mut self, stop: &dyn Fn() -> bool) -> Result<CycleStats> {
        let mut stats = CycleStats::default();
        while !stop() {
            let round = self.drive(false, true, stop)?;
            stats.absorb(&round);
            let until = Instant::now() + self.config.cycle;
            while Instant::now() < until && !stop() {
                thread::sleep(Duration::from_millis(10).min(self.config.cycle));
            }
        }
        Ok(stats)
    }

    fn renew_lease(&mut self) -> Result<()> {
        if self.lease_renewed.elapsed() >= self.config.lease_ttl / 3 {
            self.lease.renew()?;
            self.lease_renewed = Instant::now();
        }
        Ok(())
    }

    fn plan(&self, manifest: &Manifest, horizon: u64, drain: bool, in_flight: &[&InFlight]) -> Vec<CompactionTask> {
        let mut tasks = match manifest.layout.strategy {
            Strategy::Size => {
                if !in_flight.is_empty() {
                    return Vec::new();
                }
                plan_size_based(manifest, manifest.layout.size_threshold as usize).into_iter().collect()
            }
            Strategy::Tree => {
                let busy: Vec<NodePath> = in_flight
                    .iter()
                    .flat_map(|f| std::iter::once(f.task.source.clone()).chain(f.task.targets.iter().cloned()))
                    .collect();
                let opts = PlanOptions {
                    node_threshold: manifest.layout.tree.node_threshold as usize,
                    drain,
                    busy,
                };
                plan_tree_with(manifest, &opts)
            }
        };
        for t in &mut tasks {
            t.tombstone_horizon = horizon;
        }
        tasks
    }

    fn drive(&mut self, drain: bool, replan: bool, stop: &dyn Fn() -> bool) -> Result<CycleStats> {
        let started = Instant::now();
        let mut stats = CycleStats::default();
        let (tx, rx) = mpsc::channel::<(usize, Result<TaskOutput>)>();
        let mut in_flight: Vec<Option<InFlight>> = Vec::new();
        let mut queue: Vec<CompactionTask> = Vec::new();
        let mut planned_once = false;
        let mut failure: Option<Error> = None;
        let mut rr = 0usize;

        loop {
            self.renew_lease()?;
            let running: Vec<&InFlight> = in_flight.iter().flatten().collect();
            let can_plan = failure.is_none() && !stop() && (replan || !planned_once);
            if can_plan && queue.is_empty() {
                // Horizon first, then the snapshot: a log flushed in between
                // is then either in the snapshot or bounds the horizon.
                let horizon = tombstone_horizon(&self.root)?;
                let manifest = self.catalog.load()?;
                queue = self.plan(&manifest, horizon, drain, &running);
                let busy_inputs: HashSet<&SegmentId> = running.iter().flat_map(|f| f.task.inputs.iter()).collect();
                queue.retain(|t| t.inputs.iter().all(|i| !busy_inputs.contains(i)));
                planned_once = true;
            }

            let used: HashSet<usize> = in_flight.iter().flatten().map(|f| f.slot).collect();
            let mut free: Vec<usize> = (0..self.config.workers).filter(|s| !used.contains(s)).collect();
            let shift = rr % free.len().max(1);
            free.rotate_left(shift);
            while failure.is_none() && !queue.is_empty() && !free.is_empty() {
                let mut task = queue.remove(0);
                let slot = free.remove(0);
                rr += 1;
                task.worker = Some(slot);
                let file = self.task_file(task.clone());
                let idx = in_flight.len();
                let tx = tx.clone();
                let mode = self.config.mode.clone();
                let task_dir = self.root.join(TASK_DIR);
                thread::spawn(move || {
                    let res = run_task(&mode, &file, &task_dir, idx);
                    let _ = tx.send((idx, res));
                });
                in_flight.push(Some(InFlight { task, slot }));
                let now_running = in_flight.iter().flatten().count();
                stats.max_concurrent = stats.max_concurrent.max(now_running);
            }

            if in_flight.iter().all(Option::is_none) {
                if failure.is_some() || queue.is_empty() {
                    break;
                }
                continue;
            }

            let (idx, res) = rx.recv().expect("worker threads hold a sender");
            let done = in_flight[idx].take().expect("task completes once");
            match res {
                Ok(out) => match self.catalog.retire(&self.lease, &done.task.inputs, out.outputs.clone()) {
                    Ok(_) => {
                        stats.tasks_run += 1;
                        stats.segments_in += done.task.inputs.len();
                        stats.segments_out += out.outputs.len();
                    }
                    Err(e) => {
                        remove_outputs(&self.root, &out);
                        if e.is_segment_gone() {
                            stats.tasks_aborted += 1;
                        } else {
                            failure.get_or_insert(e);
                        }
                    }
                },
                Err(e) if e.is_segment_gone() => stats.tasks_aborted += 1,
                Err(e) => {
                    failure.get_or_insert(e);
                }
            }
        }

        stats.busy_time = started.elapsed();
        self.total.absorb(&stats);
        match failure {
            Some(e) => Err(e),
            None => Ok(stats),
        }
    }

    fn task_file(&mut self, task: CompactionTask) -> TaskFile {
        let seq = self.next_seq;
        self.next_seq += task.targets.len().max(1) as u64;
        TaskFile {
            task,
            root: self.root.clone(),
            output_dir: self.root.clone(),
            tree: self.catalog_tree(),
            output_writer: OUTPUT_WRITER.to_string(),
            output_seq_start: seq,
            fp_rate: self.config.fp_rate,
        }
    }

    fn catalog_tree(&self) -> crate::catalog::TreeConfig {
        self.catalog.load().map(|m| m.layout.tree).unwrap_or_default()
    }
}

fn remove_outputs(root: &Path, out: &TaskOutput) {
    for (meta, _) in &out.outputs {
        let _ = fs::remove_file(meta.path(root));
        let _ = fs::remove_file(meta.bloom_path(root));
    }
}

fn run_task(mode: &WorkerMode, file: &TaskFile, task_dir: &Path, idx: usize) -> Result<TaskOutput> {
    match mode {
        WorkerMode::InProcess => execute(file),
        WorkerMode::ChildProcess { exe } => {
            fs::create_dir_all(task_dir).at(task_dir)?;
            let path = task_dir.join(format!(
                "task-{}-{}-{idx}.json",
                std::process::id(),
                file.output_seq_start
            ));
            fs::write(&path, serde_json::to_vec_pretty(file).expect("task serializes")).at(&path)?;
            let output = Command::new(exe).arg("compact-worker").arg("--task").arg(&path).output().at(exe)?;
            let _ = fs::remove_file(&path);
            if !output.status.success() {
                let stderr = String::from_utf8_lossy(&output.stderr);
                if stderr.contains("segment gone") {
                    return Err(Error::SegmentGone(stderr.trim().to_string()));
                }
                return Err(Error::io(
                    exe,
                    std::io::Error::other(format!("compact-worker failed: {}", stderr.trim())),
                ));
            }
            serde_json::from_slice(&output.stdout).map_err(|source| Error::Json { path, source })
        }
    }
}

/// Entry point of a `compact-worker` process.
pub fn run_task_file(path: &Path) -> Result<TaskOutput> {
    let bytes = fs::read(path).at(path)?;
    let file: TaskFile =
        serde_json::from_slice(&bytes).map_err(|source| Error::Json { path: path.to_path_buf(), source })?;
    execute(&file)
}
