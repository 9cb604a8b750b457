//! Per-tenant metrics over completed-request events.

use std::collections::BTreeMap;
use std::io::Write;

use anyhow::{bail, Result};
use serde::{Deserialize, Serialize};
use tenantkv_fairness::planner::{violation, Score, DEFAULT_ALPHA};
use tenantkv_fairness::scheduler::minmax_ratio;

use crate::workload::OpKind;

/// One completed request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub tenant: usize,
    pub op: OpKind,
    pub start_us: u64,
    pub end_us: u64,
    pub bytes: u64,
    #[serde(default)]
    pub cache_hit: bool,
}

impl Event {
    pub fn latency_us(&self) -> u64 {
        self.end_us.saturating_sub(self.start_us)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureOptions {
    /// Events completing before this are ramp-up and ignored.
    pub ramp_us: u64,
    /// End of the window, exclusive; just past the last completion when unset.
    pub end_us: Option<u64>,
    pub tenants: usize,
    pub baselines: Option<Vec<f64>>,
    pub alpha: f64,
    pub cache_occupancy: Option<Vec<f64>>,
}

impl Default for MeasureOptions {
    fn default() -> Self {
        MeasureOptions { ramp_us: 0, end_us: None, tenants: 0, baselines: None, alpha: DEFAULT_ALPHA, cache_occupancy: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TenantMetrics {
    pub tenant: usize,
    pub ops: u64,
    pub throughput: f64,
    pub p50_us: u64,
    pub p95_us: u64,
    pub p99_us: u64,
    pub bytes: u64,
    /// Share of all bytes delivered in the window.
    pub byte_share: f64,
    pub cache_hits: u64,
    pub baseline: Option<f64>,
    pub violation: Option<f64>,
    pub cache_occupancy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// False when the measurement window holds no events.
    pub valid: bool,
    pub window_s: f64,
    pub tenants: Vec<TenantMetrics>,
    pub j: Option<f64>,
    pub e: Option<f64>,
    pub d: Option<f64>,
    pub minmax: f64,
    pub starved: bool,
}

impl MetricsReport {
    pub fn throughputs(&self) -> Vec<f64> {
        self.tenants.iter().map(|t| t.throughput).collect()
    }
}

/// Nearest-rank quantile of sorted samples.
pub fn quantile(sorted: &[u64], q: f64) -> u64 {
    if sorted.is_empty() {
        return 0;
    }
    let rank = (q * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

pub fn measure(events: &[Event], opts: &MeasureOptions) -> Result<MetricsReport> {
    let tenants = opts.tenants.max(events.iter().map(|e| e.tenant + 1).max().unwrap_or(0));
    if let Some(b) = &opts.baselines {
        if b.len() != tenants {
            bail!("{} baselines for {tenants} tenants", b.len());
        }
    }
    let end = opts.end_us.unwrap_or_else(|| events.iter().map(|e| e.end_us + 1).max().unwrap_or(0));
    let window_us = end.saturating_sub(opts.ramp_us);
    let in_window: Vec<&Event> = events.iter().filter(|e| e.end_us >= opts.ramp_us && e.end_us < end).collect();
    let valid = window_us > 0 && !in_window.is_empty();
    let window_s = window_us as f64 / 1e6;

    let mut lat: Vec<Vec<u64>> = vec![Vec::new(); tenants];
    let mut bytes = vec![0u64; tenants];
    let mut hits = vec![0u64; tenants];
    for e in &in_window {
        lat[e.tenant].push(e.latency_us());
        bytes[e.tenant] += e.bytes;
        hits[e.tenant] += e.cache_hit as u64;
    }
    let total_bytes: u64 = bytes.iter().sum();
    let rows: Vec<TenantMetrics> = (0..tenants)
        .map(|t| {
            lat[t].sort_unstable();
            let ops = lat[t].len() as u64;
            let throughput = if window_s > 0.0 { ops as f64 / window_s } else { 0.0 };
            let baseline = opts.baselines.as_ref().map(|b| b[t]);
            TenantMetrics {
                tenant: t,
                ops,
                throughput,
                p50_us: quantile(&lat[t], 0.50),
                p95_us: quantile(&lat[t], 0.95),
                p99_us: quantile(&lat[t], 0.99),
                bytes: bytes[t],
                byte_share: if total_bytes > 0 { bytes[t] as f64 / total_bytes as f64 } else { 0.0 },
                cache_hits: hits[t],
                baseline,
                violation: baseline.and_then(|b| violation(b, throughput).ok()),
                cache_occupancy: opts.cache_occupancy.as_ref().and_then(|c| c.get(t).copied()),
            }
        })
        .collect();

    let score = match rows.iter().map(|r| r.violation).collect::<Option<Vec<f64>>>() {
        Some(v) if !v.is_empty() => Some(Score::of(&v, opts.alpha)),
        _ => None,
    };
    let mm = minmax_ratio(&rows.iter().map(|r| r.throughput).collect::<Vec<_>>());
    Ok(MetricsReport {
        valid,
        window_s,
        tenants: rows,
        j: score.map(|s| s.j),
        e: score.map(|s| s.e),
        d: score.map(|s| s.d),
        minmax: mm.ratio,
        starved: mm.starved,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesRow {
    pub time_bucket: u64,
    pub tenant: usize,
    pub ops: u64,
    pub bytes: u64,
    pub p50: u64,
    pub p99: u64,
}

/// One row per (second, tenant) with completions, by completion time.
pub fn time_series(events: &[Event]) -> Vec<SeriesRow> {
    let mut buckets: BTreeMap<(u64, usize), (Vec<u64>, u64)> = BTreeMap::new();
    for e in events {
        let b = buckets.entry((e.end_us / 1_000_000, e.tenant)).or_default();
        b.0.push(e.latency_us());
        b.1 += e.bytes;
    }
    buckets
        .into_iter()
        .map(|((time_bucket, tenant), (mut lat, bytes))| {
            lat.sort_unstable();
            SeriesRow {
                time_bucket,
                tenant,
                ops: lat.len() as u64,
                bytes,
                p50: quantile(&lat, 0.5),
                p99: quantile(&lat, 0.99),
            }
        })
        .collect()
}

pub fn write_series_csv(out: impl Write, rows: &[SeriesRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["time_bucket", "tenant", "ops", "bytes", "p50", "p99"])?;
    for r in rows {
        w.write_record([
            r.time_bucket.to_string(),
            r.tenant.to_string(),
            r.ops.to_string(),
            r.bytes.to_string(),
            r.p50.to_string(),
            r.p99.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_events(text: &str) -> Result<Vec<Event>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        match serde_json::from_str(line) {
            Ok(e) => out.push(e),
            Err(err) => bail!("event line {}: {err}", i + 1),
        }
    }
    Ok(out)
}

pub fn write_events(out: &mut impl Write, events: &[Event]) -> Result<()> {
    for e in events {
        serde_json::to_writer(&mut *out, e)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Delta {
    pub metric: String,
    pub a: f64,
    pub b: f64,
    pub delta: f64,
}

/// Metric-by-metric differences `b - a`. Reports must cover the same tenants.
pub fn compare(a: &MetricsReport, b: &MetricsReport) -> Result<Vec<Delta>> {
    let ids = |r: &MetricsReport| r.tenants.iter().map(|t| t.tenant).collect::<Vec<_>>();
    if ids(a) != ids(b) {
        bail!("reports cover different tenants: {:?} vs {:?}", ids(a), ids(b));
    }
    let mut out = Vec::new();
    let mut push = |metric: String, x: f64, y: f64| out.push(Delta { metric, a: x, b: y, delta: y - x });
    for (x, y) in a.tenants.iter().zip(&b.tenants) {
        let t = x.tenant;
        push(format!("tenant{t}.throughput"), x.throughput, y.throughput);
        push(format!("tenant{t}.p50_us"), x.p50_us as f64, y.p50_us as f64);
        push(format!("tenant{t}.p95_us"), x.p95_us as f64, y.p95_us as f64);
        push(format!("tenant{t}.p99_us"), x.p99_us as f64, y.p99_us as f64);
        push(format!("tenant{t}.bytes"), x.bytes as f64, y.bytes as f64);
        push(format!("tenant{t}.byte_share"), x.byte_share, y.byte_share);
        if let (Some(v), Some(w)) = (x.violation, y.violation) {
            push(format!("tenant{t}.violation"), v, w);
        }
    }
    for (name, x, y) in [("j", a.j, b.j), ("e", a.e, b.e), ("d", a.d, b.d)] {
        if let (Some(x), Some(y)) = (x, y) {
            push(name.to_string(), x, y);
        }
    }
    push("minmax".to_string(), a.minmax, b.minmax);
    Ok(out)
}
