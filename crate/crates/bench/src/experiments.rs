//! The fairness, planner and compaction experiments. Each returns a
//! serializable outcome whose `checks` evaluate the pass criteria.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};
use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tenantkv_fairness::planner::{
    hill_climb, match_profile, signature, HillClimbOptions, PerfModel, PerfProfile, ReservationPlan, DEFAULT_ALPHA,
};
use tenantkv_fairness::scheduler::PolicyKind;
use tenantkv_store::catalog::{Layout, Strategy};
use tenantkv_store::compaction::{CompactionManager, CycleStats, ManagerConfig, WorkerMode};
use tenantkv_store::{StoreHandle, StoreOptions};

use crate::metrics::{measure, MeasureOptions, MetricsReport};
use crate::sim::{preload, simulate, value_bytes, Backend, SimConfig, SimTenant, StoreBackend, SyntheticBackend};
use crate::workload::{derive_seed, gen_stream, key_name, KeyDistribution, OpMix, ValueSize, WorkloadSpec};

/// One evaluated pass criterion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub id: String,
    pub pass: bool,
    pub detail: String,
}

impl Check {
    pub fn new(id: &str, pass: bool, detail: String) -> Self {
        Check { id: id.to_string(), pass, detail }
    }

    pub fn line(&self) -> String {
        format!("{} {}: {}", if self.pass { "PASS" } else { "FAIL" }, self.id, self.detail)
    }
}

pub fn tenant(workload: WorkloadSpec) -> SimTenant {
    SimTenant { workload, weight: 1.0, expected: None }
}

/// Summarise a run over its post-ramp window.
pub fn summarize(cfg: &SimConfig, events: &[crate::metrics::Event], baselines: Option<Vec<f64>>) -> Result<MetricsReport> {
    measure(
        events,
        &MeasureOptions {
            ramp_us: (cfg.ramp_s * 1e6) as u64,
            end_us: Some((cfg.duration_s * 1e6) as u64),
            tenants: cfg.tenants.len(),
            baselines,
            alpha: DEFAULT_ALPHA,
            cache_occupancy: None,
        },
    )
}

/// Byte rate the device sustains for values of `mean` bytes.
pub fn device_bytes_per_s(cfg: &SimConfig, mean: f64) -> f64 {
    cfg.device.capacity_ops(mean) * mean
}

/// Post-ramp throughput of each tenant running alone with the full node.
pub fn solo_baselines(cfg: &SimConfig, backend: &mut dyn Backend) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for t in &cfg.tenants {
        let mut solo = cfg.clone();
        solo.tenants = vec![SimTenant { expected: None, ..t.clone() }];
        solo.scheduler.policy = PolicyKind::None;
        solo.scheduler.weights.clear();
        solo.cache_shares = None;
        solo.disk_shares = None;
        let r = simulate(&solo, backend)?;
        out.push(summarize(&solo, &r.events, None)?.tenants[0].throughput);
    }
    Ok(out)
}

/// Open a store at `root`, loading `spec.records` values when it is empty.
pub fn prepare_store(root: &Path, spec: &WorkloadSpec) -> Result<StoreHandle> {
    let mut handle = StoreHandle::open(root, StoreOptions::new("bench"))?;
    if handle.snapshot().segment_count() == 0 {
        info!("loading {} records into {}", spec.records, root.display());
        preload(&mut handle, spec)?;
        let mut mgr = CompactionManager::start(root, ManagerConfig::default())?;
        mgr.run_until_quiescent(true)?;
        mgr.release()?;
        handle.refresh();
    }
    Ok(handle)
}

fn read_spec(records: u64, threads: usize, seed: u64) -> WorkloadSpec {
    WorkloadSpec {
        records,
        threads,
        value_size: ValueSize::Uniform { min: 100, max: 1200 },
        seed,
        ..WorkloadSpec::default()
    }
}

// Fairness contrast between policies.

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ContrastParams {
    pub duration_s: f64,
    pub ramp_s: f64,
    pub records: u64,
    pub threads: Vec<usize>,
    pub seed: u64,
    /// Serve reads from a store at this root instead of synthetic sizes.
    pub root: Option<PathBuf>,
}

impl Default for ContrastParams {
    fn default() -> Self {
        ContrastParams { duration_s: 180.0, ramp_s: 10.0, records: 100_000, threads: vec![50, 200], seed: 7, root: None }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicyRun {
    pub policy: PolicyKind,
    pub report: MetricsReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContrastOutcome {
    pub baselines: Vec<f64>,
    pub runs: Vec<PolicyRun>,
}

impl ContrastOutcome {
    pub fn j(&self, policy: PolicyKind) -> f64 {
        self.runs.iter().find(|r| r.policy == policy).and_then(|r| r.report.j).unwrap_or(f64::NAN)
    }

    pub fn checks(&self) -> Vec<Check> {
        let (none, wfq, drr) = (self.j(PolicyKind::None), self.j(PolicyKind::Wfq), self.j(PolicyKind::DrrLp));
        vec![Check::new(
            "F1",
            none <= 0.85 && drr >= 0.95 && none <= wfq && wfq <= drr,
            format!("J none={none:.3} (<=0.85) wfq={wfq:.3} drr={drr:.3} (>=0.95), ordered none<=wfq<=drr"),
        )]
    }
}

pub fn contrast_config(p: &ContrastParams) -> SimConfig {
    let mut cfg = SimConfig { duration_s: p.duration_s, ramp_s: p.ramp_s, seed: p.seed, ..SimConfig::default() };
    for (i, &th) in p.threads.iter().enumerate() {
        cfg.tenants.push(tenant(read_spec(p.records, th, i as u64 + 1)));
    }
    cfg.scheduler.total_credits = 2.0 * device_bytes_per_s(&cfg, 650.0);
    cfg
}

pub fn policy_contrast(p: &ContrastParams) -> Result<ContrastOutcome> {
    let cfg = contrast_config(p);
    let mut backend: Box<dyn Backend> = match &p.root {
        Some(root) => Box::new(StoreBackend { handle: prepare_store(root, &cfg.tenants[0].workload)? }),
        None => Box::new(SyntheticBackend),
    };
    let baselines = solo_baselines(&cfg, backend.as_mut())?;
    let mut runs = Vec::new();
    for policy in [PolicyKind::None, PolicyKind::Wfq, PolicyKind::DrrLp] {
        let mut c = cfg.clone();
        c.scheduler.policy = policy;
        let r = simulate(&c, backend.as_mut())?;
        let report = summarize(&c, &r.events, Some(baselines.clone()))?;
        info!("{policy:?}: throughput {:?} J {:?}", report.throughputs(), report.j);
        runs.push(PolicyRun { policy, report });
    }
    Ok(ContrastOutcome { baselines, runs })
}

// Weighted shares.

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct WeightedParams {
    pub duration_s: f64,
    pub ramp_s: f64,
    pub weights: Vec<f64>,
    pub threads: usize,
    pub seed: u64,
}

impl Default for WeightedParams {
    fn default() -> Self {
        WeightedParams { duration_s: 60.0, ramp_s: 5.0, weights: vec![0.5, 0.333, 0.167], threads: 50, seed: 11 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeightedOutcome {
    pub weights: Vec<f64>,
    pub bytes: Vec<u64>,
    pub report: MetricsReport,
}

impl WeightedOutcome {
    /// Admitted bytes of each tenant over the last tenant's.
    pub fn ratios(&self) -> Vec<f64> {
        let last = *self.bytes.last().unwrap_or(&1) as f64;
        self.bytes.iter().map(|&b| b as f64 / last).collect()
    }

    pub fn checks(&self) -> Vec<Check> {
        let r = self.ratios();
        let pass = r.len() == 3 && (r[0] / 3.0 - 1.0).abs() <= 0.15 && (r[1] / 2.0 - 1.0).abs() <= 0.15;
        vec![Check::new("F2", pass, format!("admitted bytes ratio {:.2}:{:.2}:1 (3:2:1 +-15%)", r[0], r[1]))]
    }
}

pub fn weighted_shares(p: &WeightedParams) -> Result<WeightedOutcome> {
    let mut cfg = SimConfig { duration_s: p.duration_s, ramp_s: p.ramp_s, seed: p.seed, ..SimConfig::default() };
    for &w in &p.weights {
        cfg.tenants.push(SimTenant { weight: w, ..tenant(read_spec(100_000, p.threads, 1)) });
    }
    cfg.scheduler.policy = PolicyKind::DrrLp;
    cfg.scheduler.total_credits = 2.0 * device_bytes_per_s(&cfg, 650.0);
    let r = simulate(&cfg, &mut SyntheticBackend)?;
    let report = summarize(&cfg, &r.events, None)?;
    Ok(WeightedOutcome {
        weights: p.weights.clone(),
        bytes: report.tenants.iter().map(|t| t.bytes).collect(),
        report,
    })
}

// Scan protection.

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ScanParams {
    pub duration_s: f64,
    pub ramp_s: f64,
    pub threads: usize,
    pub scan_rows: u64,
    pub piece_rows: u64,
    pub seed: u64,
}

impl Default for ScanParams {
    fn default() -> Self {
        ScanParams { duration_s: 60.0, ramp_s: 5.0, threads: 50, scan_rows: 200, piece_rows: 5, seed: 13 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScanRun {
    pub label: String,
    pub policy: PolicyKind,
    pub piece_rows: u64,
    /// Mean throughput of the two read tenants.
    pub read_throughput: f64,
    pub report: MetricsReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScanOutcome {
    pub runs: Vec<ScanRun>,
}

impl ScanOutcome {
    pub fn read_throughput(&self, label: &str) -> f64 {
        self.runs.iter().find(|r| r.label == label).map_or(f64::NAN, |r| r.read_throughput)
    }

    pub fn checks(&self) -> Vec<Check> {
        let base = self.read_throughput("read_only");
        let split = self.read_throughput("split");
        let whole = self.read_throughput("unsplit");
        vec![Check::new(
            "F4",
            split >= 0.8 * base && split >= 1.5 * whole,
            format!(
                "read ops/s split={split:.0} read-only={base:.0} (ratio {:.2} >= 0.8) unsplit={whole:.0} (ratio {:.2} >= 1.5)",
                split / base,
                split / whole
            ),
        )]
    }
}

pub fn scan_protection(p: &ScanParams) -> Result<ScanOutcome> {
    let reader = read_spec(100_000, p.threads, 1);
    let scanner = WorkloadSpec { mix: OpMix::scans(), scan_rows: p.scan_rows, seed: 3, ..reader.clone() };
    let base = SimConfig { duration_s: p.duration_s, ramp_s: p.ramp_s, seed: p.seed, ..SimConfig::default() };
    let credits = 2.0 * device_bytes_per_s(&base, 650.0);
    let variants = [
        ("read_only", PolicyKind::DrrLp, p.piece_rows, false),
        ("split", PolicyKind::DrrLp, p.piece_rows, true),
        ("unsplit", PolicyKind::None, 0, true),
        ("drr_unsplit", PolicyKind::DrrLp, 0, true),
    ];
    let mut runs = Vec::new();
    for (label, policy, piece_rows, scans) in variants {
        let mut cfg = base.clone();
        let third = if scans { scanner.clone() } else { WorkloadSpec { seed: 3, ..reader.clone() } };
        cfg.tenants = vec![
            tenant(reader.clone()),
            tenant(WorkloadSpec { seed: 2, ..reader.clone() }),
            tenant(third),
        ];
        cfg.scheduler.policy = policy;
        cfg.scheduler.piece_rows = piece_rows;
        cfg.scheduler.total_credits = credits;
        let r = simulate(&cfg, &mut SyntheticBackend)?;
        let report = summarize(&cfg, &r.events, None)?;
        let read_throughput = (report.tenants[0].throughput + report.tenants[1].throughput) / 2.0;
        info!("{label}: read tenants {read_throughput:.0} ops/s");
        runs.push(ScanRun { label: label.to_string(), policy, piece_rows, read_throughput, report });
    }
    Ok(ScanOutcome { runs })
}

// Elastic redistribution.

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ElasticParams {
    pub duration_s: f64,
    pub threads: usize,
    /// Throttle of the slow tenant as a fraction of its expected rate.
    pub throttle: f64,
    pub seed: u64,
}

impl Default for ElasticParams {
    fn default() -> Self {
        ElasticParams { duration_s: 6.0, threads: 50, throttle: 0.5, seed: 17 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ElasticOutcome {
    pub base: Vec<f64>,
    pub expected: Vec<f64>,
    pub throttle: f64,
    pub refills: Vec<crate::sim::RefillRecord>,
}

impl ElasticOutcome {
    pub fn checks(&self) -> Vec<Check> {
        let want = self.base[0] + self.throttle * self.base[1];
        let total: f64 = self.base.iter().sum();
        // Refill 0 is the initial grant; 1 and 2 close the first two periods.
        let hit = self.refills.iter().skip(1).take(2).find_map(|r| {
            let e = r.elastic.as_ref()?;
            (e.slow[1] && !e.slow[0]).then_some((r, e))
        });
        let (pass, detail) = match hit {
            Some((r, e)) => {
                let sum: f64 = e.allocations.iter().sum();
                let pass = (e.allocations[0] - want).abs() <= 1e-6
                    && (r.grants[0] - want).abs() <= 1e-6
                    && (sum - total).abs() <= 1e-6;
                (
                    pass,
                    format!(
                        "at {:.1}s busy allocation {:.0} (want base {:.0} + {:.0}), totals {sum:.0} vs {total:.0}",
                        r.time_us as f64 / 1e6,
                        e.allocations[0],
                        self.base[0],
                        self.throttle * self.base[1]
                    ),
                )
            }
            None => (false, "no redistribution within two refill periods".to_string()),
        };
        vec![Check::new("P3", pass, detail)]
    }
}

pub fn elastic_reservation(p: &ElasticParams) -> Result<ElasticOutcome> {
    let spec = WorkloadSpec { value_size: ValueSize::Fixed(1000), threads: p.threads, ..WorkloadSpec::default() };
    let mut cfg = SimConfig { duration_s: p.duration_s, ramp_s: 0.0, seed: p.seed, ..SimConfig::default() };
    cfg.tenants = vec![tenant(spec.clone()), tenant(WorkloadSpec { seed: 2, ..spec.clone() })];
    let baselines = solo_baselines(&SimConfig { duration_s: 5.0, ramp_s: 1.0, ..cfg.clone() }, &mut SyntheticBackend)?;
    let n = cfg.tenants.len() as f64;
    let expected: Vec<f64> = baselines.iter().map(|b| b / n).collect();
    cfg.tenants[1].workload.rate = Some(p.throttle * expected[1]);
    for (t, e) in cfg.tenants.iter_mut().zip(&expected) {
        t.expected = Some(*e);
    }
    cfg.scheduler.policy = PolicyKind::DrrPeriodic;
    cfg.scheduler.elastic = true;
    cfg.scheduler.refill_interval_ms = 1000;
    cfg.scheduler.total_credits = 2.0 * device_bytes_per_s(&cfg, 1000.0);
    let r = simulate(&cfg, &mut SyntheticBackend)?;
    let base = r.refills[0].grants.clone();
    Ok(ElasticOutcome { base, expected, throttle: p.throttle, refills: r.refills })
}

// Planner on/off.

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerParams {
    pub duration_s: f64,
    pub ramp_s: f64,
    /// Length of each profiling run.
    pub profile_s: f64,
    pub cache_budget: u64,
    pub threads: usize,
    pub seed: u64,
}

impl Default for PlannerParams {
    fn default() -> Self {
        PlannerParams { duration_s: 30.0, ramp_s: 5.0, profile_s: 4.0, cache_budget: 16 << 20, threads: 50, seed: 19 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlannerOutcome {
    pub baselines: Vec<f64>,
    pub plan: ReservationPlan,
    pub off: MetricsReport,
    pub on: MetricsReport,
}

impl PlannerOutcome {
    pub fn checks(&self) -> Vec<Check> {
        let (off, on) = (self.off.d.unwrap_or(f64::NAN), self.on.d.unwrap_or(f64::NAN));
        vec![Check::new("planner", on >= off, format!("D planner on={on:.3} off={off:.3}"))]
    }
}

/// A hotspot tenant and a uniform tenant sharing cache and disk credits.
pub fn planner_config(p: &PlannerParams) -> SimConfig {
    let hot = WorkloadSpec {
        subset: Some(10_000),
        distribution: KeyDistribution::Zipfian { theta: 0.99 },
        threads: p.threads,
        ..WorkloadSpec::default()
    };
    let uniform = WorkloadSpec { threads: p.threads, seed: 2, ..WorkloadSpec::default() };
    let mut cfg = SimConfig {
        duration_s: p.duration_s,
        ramp_s: p.ramp_s,
        seed: p.seed,
        cache_budget: p.cache_budget,
        ..SimConfig::default()
    };
    cfg.tenants = vec![tenant(hot), tenant(uniform)];
    cfg.scheduler.policy = PolicyKind::DrrPeriodic;
    cfg.scheduler.total_credits = device_bytes_per_s(&cfg, 1000.0);
    cfg
}

/// Profile one tenant alone over the reservation grid.
pub fn profile_tenant(cfg: &SimConfig, index: usize, profile_s: f64) -> Result<PerfProfile> {
    let t = &cfg.tenants[index];
    let mut stream = gen_stream(&t.workload, index, derive_seed(cfg.seed, t.workload.seed))?;
    let window: Vec<u64> = (0..10_000).map(|_| stream.key()).collect();
    let ratio = signature(&window);
    let mut solo = cfg.clone();
    solo.tenants = vec![t.clone()];
    solo.scheduler.weights.clear();
    solo.duration_s = profile_s;
    solo.ramp_s = profile_s / 3.0;
    let err = std::cell::RefCell::new(None);
    let run = |c: f64, h: f64| -> f64 {
        let mut s = solo.clone();
        s.cache_shares = Some(vec![c]);
        s.disk_shares = Some(vec![h]);
        match simulate(&s, &mut SyntheticBackend).and_then(|r| summarize(&s, &r.events, None)) {
            Ok(m) => m.tenants[0].throughput,
            Err(e) => {
                err.borrow_mut().get_or_insert(e);
                0.0
            }
        }
    };
    let baseline = run(1.0, 1.0);
    let profile = PerfProfile::sample(&format!("tenant{index}"), ratio, baseline, run);
    match err.into_inner() {
        Some(e) => Err(e),
        None => Ok(profile),
    }
}

/// Match each tenant's key-repeat signature against `profiles` and plan.
pub fn plan_reservations(cfg: &SimConfig, profiles: &[PerfProfile], baselines: &[f64], seed: u64) -> Result<ReservationPlan> {
    let models = profiles.iter().map(PerfModel::fit).collect::<Result<Vec<_>, _>>()?;
    let mut chosen = Vec::new();
    for (i, t) in cfg.tenants.iter().enumerate() {
        let mut stream = gen_stream(&t.workload, i, derive_seed(cfg.seed, t.workload.seed))?;
        let window: Vec<u64> = (0..10_000).map(|_| stream.key()).collect();
        let m = match_profile(signature(&window), &models).context("no performance profiles")?;
        chosen.push(m);
    }
    let opts = HillClimbOptions { seed, ..HillClimbOptions::default() };
    Ok(hill_climb(&chosen, baselines, &opts)?)
}

pub fn apply_plan(cfg: &mut SimConfig, plan: &ReservationPlan) {
    cfg.cache_shares = Some(plan.tenants.iter().map(|r| r.cache).collect());
    cfg.disk_shares = Some(plan.tenants.iter().map(|r| r.disk).collect());
}

pub fn planner_comparison(p: &PlannerParams) -> Result<PlannerOutcome> {
    let cfg = planner_config(p);
    let profiles = (0..cfg.tenants.len()).map(|i| profile_tenant(&cfg, i, p.profile_s)).collect::<Result<Vec<_>>>()?;
    let baselines: Vec<f64> = profiles.iter().map(|pr| pr.baseline).collect();
    let plan = plan_reservations(&cfg, &profiles, &baselines, p.seed)?;
    info!("plan {:?}", plan.tenants);
    let off = simulate(&cfg, &mut SyntheticBackend)?;
    let off = summarize(&cfg, &off.events, Some(baselines.clone()))?;
    let mut planned = cfg.clone();
    apply_plan(&mut planned, &plan);
    let on = simulate(&planned, &mut SyntheticBackend)?;
    let on = summarize(&planned, &on.events, Some(baselines.clone()))?;
    Ok(PlannerOutcome { baselines, plan, off, on })
}

// Store ingest and compaction.

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct IngestParams {
    pub puts: u64,
    pub writers: usize,
    pub keys: u64,
    pub value_bytes: u64,
    pub flush_threshold: u64,
    pub seed: u64,
}

impl Default for IngestParams {
    fn default() -> Self {
        IngestParams { puts: 200_000, writers: 4, keys: 20_000, value_bytes: 1000, flush_threshold: 1 << 20, seed: 23 }
    }
}

/// Concurrent writers each put `puts / writers` values with uniform keys.
/// With `compact`, a manager compacts in the background during the ingest.
pub fn ingest(root: &Path, layout: Layout, p: &IngestParams, compact: Option<ManagerConfig>) -> Result<()> {
    let opts = |id: String| StoreOptions { layout, flush_threshold: p.flush_threshold, ..StoreOptions::new(id) };
    StoreHandle::open(root, opts("init".into()))?.close()?;
    let stop = Arc::new(AtomicBool::new(false));
    let manager = compact.map(|cfg| {
        let root = root.to_path_buf();
        let stop = stop.clone();
        thread::spawn(move || -> Result<CycleStats> {
            let mut mgr = CompactionManager::start(&root, cfg)?;
            let stats = mgr.run_until(&|| stop.load(Ordering::Relaxed))?;
            mgr.release()?;
            Ok(stats)
        })
    });
    let per = p.puts / p.writers as u64;
    let writers: Vec<_> = (0..p.writers)
        .map(|w| {
            let opts = opts(format!("w{w}"));
            let root = root.to_path_buf();
            let (keys, size, seed) = (p.keys, p.value_bytes, derive_seed(p.seed, w as u64));
            thread::spawn(move || -> Result<()> {
                let mut h = StoreHandle::open(root, opts)?;
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                for _ in 0..per {
                    let k = rng.random_range(0..keys);
                    h.put(key_name(k).as_bytes(), &value_bytes(k, size))?;
                }
                h.close()?;
                Ok(())
            })
        })
        .collect();
    for w in writers {
        w.join().expect("writer thread")?;
    }
    stop.store(true, Ordering::Relaxed);
    if let Some(m) = manager {
        m.join().expect("manager thread")?;
    }
    Ok(())
}

/// Mean segments searched per read over `reads` uniform keys.
pub fn mean_segments_read(root: &Path, keys: u64, reads: u64, seed: u64) -> Result<f64> {
    let mut h = StoreHandle::open(root, StoreOptions::new("reader"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..reads {
        let k = rng.random_range(0..keys);
        h.get(key_name(k).as_bytes())?;
    }
    let mean = h.stats().mean_segments_searched();
    h.close()?;
    Ok(mean)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayoutRun {
    pub strategy: Strategy,
    pub segments: usize,
    pub mean_segments_searched: f64,
    pub compaction: CycleStatsView,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct CycleStatsView {
    pub tasks_run: usize,
    pub tasks_aborted: usize,
    pub segments_in: usize,
    pub segments_out: usize,
    pub max_concurrent: usize,
    pub busy_s: f64,
}

impl From<&CycleStats> for CycleStatsView {
    fn from(s: &CycleStats) -> Self {
        CycleStatsView {
            tasks_run: s.tasks_run,
            tasks_aborted: s.tasks_aborted,
            segments_in: s.segments_in,
            segments_out: s.segments_out,
            max_concurrent: s.max_concurrent,
            busy_s: s.busy_time.as_secs_f64(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayoutOutcome {
    pub runs: Vec<LayoutRun>,
}

impl LayoutOutcome {
    fn mean(&self, s: Strategy) -> f64 {
        self.runs.iter().find(|r| r.strategy == s).map_or(f64::NAN, |r| r.mean_segments_searched)
    }

    pub fn checks(&self) -> Vec<Check> {
        let (tree, size) = (self.mean(Strategy::Tree), self.mean(Strategy::Size));
        vec![Check::new(
            "C1",
            tree <= 2.0 && size >= 3.0 * tree,
            format!("segments per read tree={tree:.2} (<=2.0) size={size:.2} (ratio {:.2} >= 3)", size / tree),
        )]
    }
}

fn manager_config(workers: usize, mode: &WorkerMode) -> ManagerConfig {
    ManagerConfig { workers, cycle: Duration::from_millis(200), mode: mode.clone(), ..ManagerConfig::default() }
}

/// Ingest under each layout with background compaction, compact to
/// quiescence and measure the read path.
pub fn layout_contrast(base: &Path, p: &IngestParams, mode: &WorkerMode) -> Result<LayoutOutcome> {
    let mut runs = Vec::new();
    for layout in [Layout::default(), Layout::size_based(Layout::default().size_threshold)] {
        let root = base.join(format!("{:?}", layout.strategy).to_lowercase());
        if root.exists() {
            std::fs::remove_dir_all(&root)?;
        }
        ingest(&root, layout, p, Some(manager_config(3, mode)))?;
        let mut mgr = CompactionManager::start(&root, manager_config(3, mode))?;
        let stats = mgr.run_until_quiescent(false)?;
        mgr.release()?;
        let segments = StoreHandle::open(&root, StoreOptions::new("probe"))?.snapshot().segment_count();
        let mean = mean_segments_read(&root, p.keys, 20_000, p.seed)?;
        info!("{:?}: {segments} segments, {mean:.2} searched per read", layout.strategy);
        runs.push(LayoutRun {
            strategy: layout.strategy,
            segments,
            mean_segments_searched: mean,
            compaction: (&stats).into(),
        });
    }
    Ok(LayoutOutcome { runs })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpeedupRun {
    pub workers: usize,
    pub wall_s: f64,
    pub stats: CycleStatsView,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpeedupOutcome {
    pub cpus: usize,
    pub runs: Vec<SpeedupRun>,
}

impl SpeedupOutcome {
    pub fn checks(&self) -> Vec<Check> {
        let wall = |w: usize| self.runs.iter().find(|r| r.workers == w).map_or(f64::NAN, |r| r.wall_s);
        let (one, three) = (wall(1), wall(3));
        vec![Check::new(
            "S1",
            three <= 0.6 * one,
            format!(
                "compaction wall 1 worker={one:.2}s 3 workers={three:.2}s (ratio {:.2} <= 0.6) on {} cpu(s)",
                three / one,
                self.cpus
            ),
        )]
    }
}

/// Ingest the same data twice and compact each copy to quiescence with 1
/// and 3 workers.
pub fn compaction_speedup(base: &Path, p: &IngestParams, mode: &WorkerMode) -> Result<SpeedupOutcome> {
    let mut runs = Vec::new();
    for workers in [1, 3] {
        let root = base.join(format!("workers{workers}"));
        if root.exists() {
            std::fs::remove_dir_all(&root)?;
        }
        ingest(&root, Layout::default(), p, None)?;
        let mut mgr = CompactionManager::start(&root, manager_config(workers, mode))?;
        let started = Instant::now();
        let stats = mgr.run_until_quiescent(true)?;
        let wall_s = started.elapsed().as_secs_f64();
        mgr.release()?;
        info!("{workers} worker(s): {wall_s:.2}s, {} tasks", stats.tasks_run);
        runs.push(SpeedupRun { workers, wall_s, stats: (&stats).into() });
        std::fs::remove_dir_all(&root)?;
    }
    let cpus = thread::available_parallelism().map_or(1, |n| n.get());
    Ok(SpeedupOutcome { cpus, runs })
}

pub fn speedup_params() -> IngestParams {
    IngestParams { puts: 500_000, keys: 500_000, value_bytes: 200, flush_threshold: 2 << 20, ..IngestParams::default() }
}

/// Named experiments runnable from a config file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum Named {
    Contrast(#[serde(default)] ContrastParams),
    Weighted(#[serde(default)] WeightedParams),
    Scan(#[serde(default)] ScanParams),
    Elastic(#[serde(default)] ElasticParams),
    Planner(#[serde(default)] PlannerParams),
    Layout(#[serde(default)] IngestParams),
    Speedup(#[serde(default = "speedup_params")] IngestParams),
}

/// Run a named experiment, returning its outcome as JSON and its checks.
pub fn run_named(named: &Named, root: Option<&Path>, mode: &WorkerMode) -> Result<(serde_json::Value, Vec<Check>)> {
    fn pack<T: Serialize>(o: &T, checks: Vec<Check>) -> Result<(serde_json::Value, Vec<Check>)> {
        Ok((serde_json::to_value(o)?, checks))
    }
    let need_root = || root.map(Path::to_path_buf).context("this experiment needs a store root (TENANTKV_ROOT)");
    match named {
        Named::Contrast(p) => {
            let mut p = p.clone();
            if p.root.is_none() {
                p.root = root.map(Path::to_path_buf);
            }
            let o = policy_contrast(&p)?;
            pack(&o, o.checks())
        }
        Named::Weighted(p) => {
            let o = weighted_shares(p)?;
            pack(&o, o.checks())
        }
        Named::Scan(p) => {
            let o = scan_protection(p)?;
            pack(&o, o.checks())
        }
        Named::Elastic(p) => {
            let o = elastic_reservation(p)?;
            pack(&o, o.checks())
        }
        Named::Planner(p) => {
            let o = planner_comparison(p)?;
            pack(&o, o.checks())
        }
        Named::Layout(p) => {
            let o = layout_contrast(&need_root()?, p, mode)?;
            pack(&o, o.checks())
        }
        Named::Speedup(p) => {
            let o = compaction_speedup(&need_root()?, p, mode)?;
            pack(&o, o.checks())
        }
    }
}

pub fn ensure_single(cfg: &SimConfig) -> Result<()> {
    if cfg.tenants.len() != 1 {
        bail!("baseline needs exactly one tenant, got {}", cfg.tenants.len());
    }
    Ok(())
}
