//! Discrete-event model of one storage node shared by several tenants.
//!
//! Each tenant runs closed-loop request slots. A scheduler in front of the
//! node decides which queued request enters the device queue next. The
//! device holds at most `queue_depth` requests and serves them first come,
//! first served on `channels` parallel channels; a request's service time is
//! a fixed overhead plus its bytes over the channel bandwidth, with
//! log-normal jitter. Reads may be answered from a per-tenant cache without
//! touching the device.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, VecDeque};
use std::sync::Arc;

use anyhow::{ensure, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};
use tenantkv_fairness::planner::{elastic_redistribute, Elastic};
use tenantkv_fairness::scheduler::{
    drr_admit, refill_all_dry, refill_periodic, split_scan, CreditAccount, DrrCursor, FeedbackWindow, PolicyKind,
    RefillProblem, ScanRequest, SchedulerConfig, WfqState,
};
use tenantkv_store::{StoreHandle, TenantCache};

use crate::metrics::Event;
use crate::workload::{derive_seed, gen_stream, key_name, OpKind, OpStream, TraceOp, WorkloadSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeviceConfig {
    pub channels: usize,
    pub queue_depth: usize,
    pub op_overhead_us: f64,
    /// Per-channel transfer rate.
    pub bytes_per_us: f64,
    /// Sigma of the mean-one log-normal service-time factor.
    pub jitter_sigma: f64,
    pub cache_hit_us: f64,
}

impl Default for DeviceConfig {
    fn default() -> Self {
        DeviceConfig {
            channels: 16,
            queue_depth: 128,
            op_overhead_us: 2000.0,
            bytes_per_us: 10.0,
            jitter_sigma: 0.3,
            cache_hit_us: 1000.0,
        }
    }
}

impl DeviceConfig {
    pub fn service_us(&self, bytes: u64) -> f64 {
        self.op_overhead_us + bytes as f64 / self.bytes_per_us
    }

    /// Saturated throughput in requests/sec for requests of `bytes`.
    pub fn capacity_ops(&self, bytes: f64) -> f64 {
        self.channels as f64 * 1e6 / (self.op_overhead_us + bytes / self.bytes_per_us)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTenant {
    pub workload: WorkloadSpec,
    #[serde(default = "one")]
    pub weight: f64,
    /// Expected ops/sec used by elastic redistribution.
    #[serde(default)]
    pub expected: Option<f64>,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub tenants: Vec<SimTenant>,
    pub scheduler: SchedulerConfig,
    pub device: DeviceConfig,
    pub duration_s: f64,
    pub ramp_s: f64,
    pub seed: u64,
    /// Total cache bytes; 0 disables the cache.
    pub cache_budget: u64,
    /// Cache fraction per tenant; equal when unset.
    pub cache_shares: Option<Vec<f64>>,
    /// Periodic-refill base fraction per tenant; the weights when unset.
    pub disk_shares: Option<Vec<f64>>,
    /// Keep every issued operation in the result.
    pub keep_trace: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            tenants: Vec::new(),
            scheduler: SchedulerConfig::default(),
            device: DeviceConfig::default(),
            duration_s: 60.0,
            ramp_s: 5.0,
            seed: 1,
            cache_budget: 0,
            cache_shares: None,
            disk_shares: None,
            keep_trace: false,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(!self.tenants.is_empty(), "no tenants configured");
        for t in &self.tenants {
            t.workload.validate()?;
            ensure!(t.weight > 0.0, "tenant weights must be positive");
        }
        self.scheduler.validate()?;
        ensure!(self.device.channels > 0 && self.device.queue_depth > 0, "device needs channels and queue room");
        ensure!(self.duration_s > self.ramp_s && self.ramp_s >= 0.0, "duration must exceed the ramp-up");
        for shares in [&self.cache_shares, &self.disk_shares].into_iter().flatten() {
            ensure!(shares.len() == self.tenants.len(), "one share per tenant is required");
        }
        Ok(())
    }

    /// Scheduler weights when configured for every tenant, else tenant weights.
    pub fn weights(&self) -> Vec<f64> {
        if self.scheduler.weights.len() == self.tenants.len() {
            return self.scheduler.normalized_weights(self.tenants.len());
        }
        let total: f64 = self.tenants.iter().map(|t| t.weight).sum();
        self.tenants.iter().map(|t| t.weight / total).collect()
    }
}

/// Source of read sizes and sink of writes.
pub trait Backend {
    /// Bytes returned by a read of `op`.
    fn read(&mut self, op: &TraceOp) -> Result<u64>;
    fn write(&mut self, op: &TraceOp) -> Result<()>;
}

/// Reads return the generated value size; writes are dropped.
pub struct SyntheticBackend;

impl Backend for SyntheticBackend {
    fn read(&mut self, op: &TraceOp) -> Result<u64> {
        Ok(op.size)
    }

    fn write(&mut self, _op: &TraceOp) -> Result<()> {
        Ok(())
    }
}

/// Reads and writes go to a store handle.
pub struct StoreBackend {
    pub handle: StoreHandle,
}

impl Backend for StoreBackend {
    fn read(&mut self, op: &TraceOp) -> Result<u64> {
        Ok(self.handle.get(op.key.as_bytes())?.map_or(0, |v| v.len() as u64))
    }

    fn write(&mut self, op: &TraceOp) -> Result<()> {
        match op.op {
            OpKind::Delete => self.handle.delete(op.key.as_bytes())?,
            _ => self.handle.put(op.key.as_bytes(), &value_bytes(op.key_index(), op.size))?,
        }
        Ok(())
    }
}

/// Deterministic value payload of a record.
pub fn value_bytes(index: u64, size: u64) -> Vec<u8> {
    let seed = index.to_le_bytes();
    (0..size as usize).map(|i| seed[i % 8] ^ (i as u8)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefillRecord {
    pub time_us: u64,
    pub grants: Vec<f64>,
    /// Elastic allocations, when redistribution ran.
    pub elastic: Option<Elastic>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SimResult {
    pub events: Vec<Event>,
    pub refills: Vec<RefillRecord>,
    /// Requests issued per tenant, pieces counted individually.
    pub requests: Vec<u64>,
    pub cache_occupancy: Option<Vec<f64>>,
    pub trace: Option<Vec<TraceOp>>,
    pub end_us: u64,
    pub ramp_us: u64,
}

const NS: u64 = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Ev {
    Issue { tenant: usize },
    Done { req: usize },
    Refill,
    End,
}

struct ClientOp {
    op: TraceOp,
    start: u64,
    pending: usize,
    bytes: u64,
    hit: bool,
}

struct Request {
    tenant: usize,
    client: usize,
    estimate: f64,
    /// Rows for scan pieces and whole scans.
    rows: Option<(u64, u64)>,
    bytes: u64,
    hit: bool,
}

enum Queues {
    Fifo(VecDeque<usize>),
    Wfq(WfqState<usize>),
    Drr { queues: Vec<VecDeque<usize>>, cursor: DrrCursor },
}

struct Node<'a> {
    cfg: &'a SimConfig,
    backend: &'a mut dyn Backend,
    now: u64,
    seq: u64,
    heap: BinaryHeap<Reverse<(u64, u64, Ev)>>,
    streams: Vec<OpStream>,
    clients: Vec<Option<ClientOp>>,
    requests: Vec<Option<Request>>,
    queues: Queues,
    accounts: Vec<CreditAccount>,
    windows: Vec<FeedbackWindow>,
    in_flight: Vec<usize>,
    device_fifo: VecDeque<usize>,
    device_held: usize,
    busy_channels: usize,
    cache: Option<Arc<TenantCache>>,
    jitter: Option<LogNormal<f64>>,
    rng: ChaCha8Rng,
    quota: Vec<(u64, u64)>,
    waiting_quota: Vec<usize>,
    base: Vec<f64>,
    period_ops: Vec<u64>,
    result: SimResult,
}

/// Run the node model and collect completed client operations.
pub fn simulate(cfg: &SimConfig, backend: &mut dyn Backend) -> Result<SimResult> {
    cfg.validate()?;
    let n = cfg.tenants.len();
    let weights = cfg.weights();
    let streams = cfg
        .tenants
        .iter()
        .enumerate()
        .map(|(i, t)| gen_stream(&t.workload, i, derive_seed(cfg.seed, t.workload.seed)))
        .collect::<Result<Vec<_>>>()?;
    let queues = match cfg.scheduler.policy {
        PolicyKind::None => Queues::Fifo(VecDeque::new()),
        PolicyKind::Wfq => Queues::Wfq(WfqState::from_weights(&weights)?),
        PolicyKind::DrrLp | PolicyKind::DrrPeriodic => {
            Queues::Drr { queues: vec![VecDeque::new(); n], cursor: DrrCursor::default() }
        }
    };
    let cache = if cfg.cache_budget > 0 {
        let shares = cfg.cache_shares.clone().unwrap_or_else(|| vec![1.0 / n as f64; n]);
        let c = TenantCache::new(cfg.cache_budget);
        let caps: Vec<(u32, u64)> =
            shares.iter().enumerate().map(|(i, s)| (i as u32, (s * cfg.cache_budget as f64).floor() as u64)).collect();
        c.partition(&caps)?;
        Some(Arc::new(c))
    } else {
        None
    };
    let jitter = if cfg.device.jitter_sigma > 0.0 {
        let s = cfg.device.jitter_sigma;
        Some(LogNormal::new(-s * s / 2.0, s)?)
    } else {
        None
    };
    let disk = cfg.disk_shares.clone().unwrap_or_else(|| weights.clone());
    let base: Vec<f64> = disk.iter().map(|s| (s * cfg.scheduler.total_credits).floor()).collect();
    let mut accounts = CreditAccount::for_weights(&weights);
    for a in &mut accounts {
        a.scale = 1.0;
    }
    let window = FeedbackWindow::new(cfg.scheduler.window, cfg.scheduler.default_estimate);

    let mut node = Node {
        cfg,
        backend,
        now: 0,
        seq: 0,
        heap: BinaryHeap::new(),
        streams,
        clients: Vec::new(),
        requests: Vec::new(),
        queues,
        accounts,
        windows: vec![window; n],
        in_flight: vec![0; n],
        device_fifo: VecDeque::new(),
        device_held: 0,
        busy_channels: 0,
        cache,
        jitter,
        rng: ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 0xdead)),
        quota: vec![(0, 0); n],
        waiting_quota: vec![0; n],
        base,
        period_ops: vec![0; n],
        result: SimResult {
            requests: vec![0; n],
            trace: cfg.keep_trace.then(Vec::new),
            ramp_us: (cfg.ramp_s * 1e6) as u64,
            end_us: (cfg.duration_s * 1e6) as u64,
            ..SimResult::default()
        },
    };
    node.run()?;
    if let Some(c) = &node.cache {
        let stats = c.stats();
        node.result.cache_occupancy =
            Some((0..n).map(|t| stats.iter().find(|s| s.tenant == t as u32).map_or(0.0, |s| s.occupancy)).collect());
    }
    Ok(node.result)
}

impl Node<'_> {
    fn at(&mut self, time: u64, ev: Ev) {
        self.seq += 1;
        self.heap.push(Reverse((time, self.seq, ev)));
    }

    fn run(&mut self) -> Result<()> {
        let end = (self.cfg.duration_s * 1e6) as u64 * NS;
        match self.cfg.scheduler.policy {
            PolicyKind::DrrLp => {
                let x = RefillProblem::new(
                    vec![0.0; self.accounts.len()],
                    vec![1.0; self.accounts.len()],
                    self.accounts.iter().map(|a| a.weight).collect(),
                    self.cfg.scheduler.total_credits,
                )
                .solve()?
                .x;
                for (a, x) in self.accounts.iter_mut().zip(&x) {
                    a.grant(*x);
                }
                self.result.refills.push(RefillRecord { time_us: 0, grants: x, elastic: None });
            }
            PolicyKind::DrrPeriodic => {
                let g = refill_periodic(&mut self.accounts, &self.base, None);
                self.result.refills.push(RefillRecord { time_us: 0, grants: g, elastic: None });
                self.at(self.cfg.scheduler.refill_interval_ms * 1000 * NS, Ev::Refill);
            }
            _ => {}
        }
        for (t, spec) in self.cfg.tenants.iter().enumerate() {
            for _ in 0..spec.workload.threads {
                self.at(0, Ev::Issue { tenant: t });
            }
        }
        self.at(end, Ev::End);
        while let Some(Reverse((time, _, ev))) = self.heap.pop() {
            self.now = time;
            match ev {
                Ev::End => break,
                Ev::Issue { tenant } => self.issue(tenant)?,
                Ev::Done { req } => self.complete(req)?,
                Ev::Refill => self.periodic_refill()?,
            }
            self.dispatch()?;
        }
        Ok(())
    }

    /// Fixed one-second windows admitting `floor(rate)` operations each.
    fn take_quota(&mut self, tenant: usize) -> bool {
        let Some(rate) = self.cfg.tenants[tenant].workload.rate else {
            return true;
        };
        let window = self.now / (1_000_000 * NS);
        let (w, used) = &mut self.quota[tenant];
        if *w != window {
            *w = window;
            *used = 0;
        }
        if *used < rate.floor() as u64 {
            *used += 1;
            return true;
        }
        self.waiting_quota[tenant] += 1;
        if self.waiting_quota[tenant] == 1 {
            self.at((window + 1) * 1_000_000 * NS, Ev::Issue { tenant });
        }
        false
    }

    fn issue(&mut self, tenant: usize) -> Result<()> {
        let mut slots = 1;
        if self.waiting_quota[tenant] > 0 && self.quota[tenant].0 != self.now / (1_000_000 * NS) {
            slots = std::mem::take(&mut self.waiting_quota[tenant]);
        }
        for _ in 0..slots {
            if !self.take_quota(tenant) {
                continue;
            }
            self.issue_one(tenant)?;
        }
        Ok(())
    }

    fn issue_one(&mut self, tenant: usize) -> Result<()> {
        let op = self.streams[tenant].next().expect("streams are endless");
        if let Some(trace) = &mut self.result.trace {
            trace.push(op.clone());
        }
        let client = self.clients.len();
        let pieces: Vec<Option<(u64, u64)>> = match op.op {
            OpKind::Scan => {
                let start = op.key_index();
                let whole = ScanRequest { tenant, start_row: start, rows: op.size };
                if self.cfg.scheduler.piece_rows > 0 && self.cfg.scheduler.policy != PolicyKind::None {
                    split_scan(&whole, self.cfg.scheduler.piece_rows)?
                        .iter()
                        .map(|p| Some((p.start_row, p.rows)))
                        .collect()
                } else {
                    vec![Some((start, op.size))]
                }
            }
            _ => vec![None],
        };
        self.clients.push(Some(ClientOp { op, start: self.now, pending: pieces.len(), bytes: 0, hit: false }));
        for rows in pieces {
            let id = self.requests.len();
            self.requests.push(Some(Request { tenant, client, estimate: 0.0, rows, bytes: 0, hit: false }));
            self.result.requests[tenant] += 1;
            self.enqueue(id);
        }
        Ok(())
    }

    fn enqueue(&mut self, id: usize) {
        let tenant = self.requests[id].as_ref().expect("live request").tenant;
        let estimate = self.windows[tenant].estimate();
        match &mut self.queues {
            Queues::Fifo(q) => q.push_back(id),
            Queues::Wfq(w) => {
                w.push(tenant, estimate, id);
            }
            Queues::Drr { queues, .. } => queues[tenant].push_back(id),
        }
    }

    /// Move requests from the scheduler into the device while it has room.
    fn dispatch(&mut self) -> Result<()> {
        let mut refills = 0;
        loop {
            let room = self.cfg.device.queue_depth.saturating_sub(self.device_held);
            if room == 0 {
                break;
            }
            let picked: Vec<(usize, f64)> = match &mut self.queues {
                Queues::Fifo(q) => q.pop_front().map(|id| (id, 0.0)).into_iter().collect(),
                Queues::Wfq(w) => w.pick().map(|(_, id, t)| (id, t.finish - t.start)).into_iter().collect(),
                Queues::Drr { queues, cursor } => {
                    let estimates: Vec<f64> = self.windows.iter().map(FeedbackWindow::estimate).collect();
                    drr_admit(queues, &mut self.accounts, &estimates, cursor, room)
                        .into_iter()
                        .map(|(t, id)| (id, estimates[t]))
                        .collect()
                }
            };
            if picked.is_empty() {
                if refills < 2 && self.try_lp_refill()? {
                    refills += 1;
                    continue;
                }
                break;
            }
            for (id, estimate) in picked {
                self.admit(id, estimate)?;
            }
        }
        Ok(())
    }

    fn try_lp_refill(&mut self) -> Result<bool> {
        if self.cfg.scheduler.policy != PolicyKind::DrrLp {
            return Ok(false);
        }
        let Queues::Drr { queues, .. } = &self.queues else {
            return Ok(false);
        };
        if queues.iter().all(VecDeque::is_empty) {
            return Ok(false);
        }
        let dry: Vec<bool> = (0..self.accounts.len())
            .map(|i| self.accounts[i].is_dry(self.windows[i].estimate(), queues[i].len(), self.in_flight[i]))
            .collect();
        let total = self.cfg.scheduler.total_credits;
        Ok(match refill_all_dry(&mut self.accounts, &dry, total)? {
            Some(grants) => {
                self.result.refills.push(RefillRecord { time_us: self.now / NS, grants, elastic: None });
                true
            }
            None => false,
        })
    }

    fn admit(&mut self, id: usize, estimate: f64) -> Result<()> {
        let req = self.requests[id].as_mut().expect("live request");
        req.estimate = estimate;
        let tenant = req.tenant;
        self.in_flight[tenant] += 1;
        let op = self.clients[req.client].as_ref().expect("live client").op.clone();
        let bytes = match (op.op, req.rows) {
            (OpKind::Scan, Some((start, rows))) => {
                let sizes = self.cfg.tenants[tenant].workload.value_size;
                let records = self.cfg.tenants[tenant].workload.records;
                (start..start + rows).map(|r| sizes.of_key(r % records)).sum()
            }
            (OpKind::Read, _) => {
                if let Some(c) = &self.cache {
                    if let Some(v) = c.get(tenant as u32, op.key.as_bytes()) {
                        req.hit = true;
                        req.bytes = v.len() as u64;
                        let t = self.now + (self.cfg.device.cache_hit_us * NS as f64) as u64;
                        self.at(t, Ev::Done { req: id });
                        return Ok(());
                    }
                }
                self.backend.read(&op)?
            }
            _ => {
                self.backend.write(&op)?;
                op.size
            }
        };
        req.bytes = bytes;
        self.device_held += 1;
        self.device_fifo.push_back(id);
        self.start_service();
        Ok(())
    }

    fn start_service(&mut self) {
        while self.busy_channels < self.cfg.device.channels {
            let Some(id) = self.device_fifo.pop_front() else {
                return;
            };
            let bytes = self.requests[id].as_ref().expect("live request").bytes;
            let factor = self.jitter.map_or(1.0, |j| j.sample(&mut self.rng));
            let service = (self.cfg.device.service_us(bytes) * factor * NS as f64).max(1.0) as u64;
            self.busy_channels += 1;
            self.at(self.now + service, Ev::Done { req: id });
        }
    }

    fn complete(&mut self, id: usize) -> Result<()> {
        let req = self.requests[id].take().expect("request completes once");
        if !req.hit {
            self.device_held -= 1;
            self.busy_channels -= 1;
            self.start_service();
        }
        let t = req.tenant;
        self.in_flight[t] -= 1;
        self.windows[t].record(req.bytes as f64);
        if matches!(self.queues, Queues::Drr { .. }) {
            self.accounts[t].refund(req.estimate, req.bytes as f64, req.hit);
        }
        let client = self.clients[req.client].as_mut().expect("live client");
        client.pending -= 1;
        client.bytes += req.bytes;
        client.hit |= req.hit;
        if let (Some(c), OpKind::Read, false) = (&self.cache, client.op.op, req.hit) {
            c.insert(t as u32, client.op.key.as_bytes(), &vec![0u8; req.bytes as usize]);
        }
        if client.pending > 0 {
            return Ok(());
        }
        let client = self.clients[req.client].take().expect("live client");
        self.result.events.push(Event {
            tenant: t,
            op: client.op.op,
            start_us: client.start / NS,
            end_us: self.now / NS,
            bytes: client.bytes,
            cache_hit: client.hit,
        });
        self.period_ops[t] += 1;
        self.issue(t)
    }

    fn periodic_refill(&mut self) -> Result<()> {
        let interval_ms = self.cfg.scheduler.refill_interval_ms;
        let elastic = if self.cfg.scheduler.elastic {
            let expected: Option<Vec<f64>> = self.cfg.tenants.iter().map(|t| t.expected).collect();
            match expected {
                Some(expected) => {
                    let secs = interval_ms as f64 / 1000.0;
                    let actual: Vec<f64> = self.period_ops.iter().map(|&o| o as f64 / secs).collect();
                    Some(elastic_redistribute(&expected, &actual, &self.base)?)
                }
                None => None,
            }
        } else {
            None
        };
        self.period_ops.iter_mut().for_each(|o| *o = 0);
        let grants = refill_periodic(&mut self.accounts, &self.base, elastic.as_ref());
        self.result.refills.push(RefillRecord { time_us: self.now / NS, grants, elastic });
        self.at(self.now + interval_ms * 1000 * NS, Ev::Refill);
        Ok(())
    }
}

/// Fill a store with `records` values sized by `spec`.
pub fn preload(handle: &mut StoreHandle, spec: &WorkloadSpec) -> Result<()> {
    for i in 0..spec.records {
        handle.put(key_name(i).as_bytes(), &value_bytes(i, spec.value_size.of_key(i)))?;
    }
    handle.flush()?;
    Ok(())
}
