//! Seeded key-value workload generation.

use std::io::Write;

use anyhow::{bail, ensure, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Pareto, Zipf};
use serde::{Deserialize, Serialize};

pub const DEFAULT_ZIPF_THETA: f64 = 0.99;
pub const DEFAULT_POWERLAW_SHAPE: f64 = 3.2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KeyDistribution {
    Uniform,
    /// Zipf over the hot subset, most popular key first.
    Zipfian { theta: f64 },
    /// Key rank drawn with density proportional to `x^-shape`.
    Powerlaw { shape: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueSize {
    Fixed(u64),
    /// Per-key size, uniform in `[min, max]` and stable for a key.
    Uniform { min: u64, max: u64 },
}

impl ValueSize {
    pub fn of_key(&self, index: u64) -> u64 {
        match *self {
            ValueSize::Fixed(n) => n,
            ValueSize::Uniform { min, max } => min + mix64(index ^ 0x5bd1_e995) % (max - min + 1),
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            ValueSize::Fixed(n) => n as f64,
            ValueSize::Uniform { min, max } => (min + max) as f64 / 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpMix {
    #[serde(default)]
    pub read: f64,
    #[serde(default)]
    pub write: f64,
    #[serde(default)]
    pub delete: f64,
    #[serde(default)]
    pub scan: f64,
}

impl Default for OpMix {
    fn default() -> Self {
        OpMix { read: 1.0, write: 0.0, delete: 0.0, scan: 0.0 }
    }
}

impl OpMix {
    pub fn reads() -> Self {
        OpMix::default()
    }

    pub fn scans() -> Self {
        OpMix { read: 0.0, write: 0.0, delete: 0.0, scan: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        let w = [self.read, self.write, self.delete, self.scan];
        ensure!(w.iter().all(|x| x.is_finite() && *x >= 0.0), "op mix weights must be non-negative");
        let sum: f64 = w.iter().sum();
        ensure!((sum - 1.0).abs() < 1e-9, "op mix weights sum to {sum}, not 1");
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EtcKind {
    /// Reads and writes, 30:1.
    Rw,
    /// Reads, writes and deletes, 30:1:15.
    Rwd,
}

pub fn etc_mix(kind: EtcKind) -> OpMix {
    match kind {
        EtcKind::Rw => OpMix { read: 30.0 / 31.0, write: 1.0 / 31.0, delete: 0.0, scan: 0.0 },
        EtcKind::Rwd => OpMix { read: 30.0 / 46.0, write: 1.0 / 46.0, delete: 15.0 / 46.0, scan: 0.0 },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorkloadSpec {
    pub records: u64,
    /// Keys are drawn from the first `subset` records; all when unset.
    pub subset: Option<u64>,
    pub distribution: KeyDistribution,
    pub mix: OpMix,
    pub scan_rows: u64,
    pub value_size: ValueSize,
    /// Closed-loop in-flight request slots.
    pub threads: usize,
    /// Target ops/sec over all slots; unlimited when unset.
    pub rate: Option<f64>,
    pub duration_s: f64,
    pub seed: u64,
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        WorkloadSpec {
            records: 100_000,
            subset: None,
            distribution: KeyDistribution::Uniform,
            mix: OpMix::default(),
            scan_rows: 200,
            value_size: ValueSize::Fixed(1000),
            threads: 50,
            rate: None,
            duration_s: 180.0,
            seed: 1,
        }
    }
}

impl WorkloadSpec {
    pub fn validate(&self) -> Result<()> {
        self.mix.validate()?;
        ensure!(self.records > 0, "record count must be positive");
        if let Some(s) = self.subset {
            ensure!(s > 0 && s <= self.records, "subset {s} must be in 1..={}", self.records);
        }
        ensure!(self.threads > 0, "at least one thread is required");
        if let ValueSize::Uniform { min, max } = self.value_size {
            ensure!(min <= max, "value size range is empty");
        }
        match self.distribution {
            KeyDistribution::Zipfian { theta } => ensure!(theta > 0.0, "zipf theta must be positive"),
            KeyDistribution::Powerlaw { shape } => ensure!(shape > 1.0, "power-law shape must exceed 1"),
            KeyDistribution::Uniform => {}
        }
        if self.mix.scan > 0.0 {
            ensure!(self.scan_rows > 0, "scans need at least one row");
        }
        if let Some(r) = self.rate {
            ensure!(r >= 1.0, "rate must be at least one op/sec");
        }
        Ok(())
    }

    pub fn key_space(&self) -> u64 {
        self.subset.unwrap_or(self.records)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    Read,
    Write,
    Delete,
    Scan,
}

/// One generated operation. `size` is the value size in bytes, or the row
/// count for scans.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceOp {
    pub op: OpKind,
    pub key: String,
    pub size: u64,
    pub tenant: usize,
    pub seq: u64,
}

impl TraceOp {
    pub fn key_index(&self) -> u64 {
        key_index(&self.key).expect("generated key")
    }
}

/// Bijective 64-bit mixer.
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn unmix64(mut z: u64) -> u64 {
    z = unxorshift(z, 31);
    z = unxorshift(z.wrapping_mul(0x3196_42b2_d24d_8ec3), 27);
    z = unxorshift(z.wrapping_mul(0x96de_1b17_3f11_9089), 30);
    z
}

fn unxorshift(z: u64, s: u32) -> u64 {
    let mut x = z;
    for _ in 0..64 / s + 1 {
        x = z ^ (x >> s);
    }
    x
}

/// Key name of record `index`: `user` and 16 scrambled hex digits.
pub fn key_name(index: u64) -> String {
    format!("user{:016x}", mix64(index))
}

pub fn key_index(key: &str) -> Option<u64> {
    let hex = key.strip_prefix("user")?;
    u64::from_str_radix(hex, 16).ok().map(unmix64)
}

/// Sub-seed for a numbered component of a seeded run.
pub fn derive_seed(seed: u64, component: u64) -> u64 {
    mix64(seed ^ mix64(component.wrapping_add(0x9e37_79b9_7f4a_7c15)))
}

enum Sampler {
    Uniform(u64),
    Zipf(Zipf<f64>),
    Pareto(Pareto<f64>, u64),
}

/// Deterministic operation stream of one tenant.
pub struct OpStream {
    spec: WorkloadSpec,
    tenant: usize,
    rng: ChaCha8Rng,
    sampler: Sampler,
    seq: u64,
}

impl OpStream {
    pub fn key(&mut self) -> u64 {
        match &self.sampler {
            Sampler::Uniform(n) => self.rng.random_range(0..*n),
            Sampler::Zipf(z) => z.sample(&mut self.rng) as u64 - 1,
            Sampler::Pareto(p, n) => loop {
                let x = p.sample(&mut self.rng);
                let k = x.floor() as u64 - 1;
                if k < *n {
                    break k;
                }
            },
        }
    }
}

impl Iterator for OpStream {
    type Item = TraceOp;

    fn next(&mut self) -> Option<TraceOp> {
        let m = self.spec.mix;
        let r: f64 = self.rng.random::<f64>() * (m.read + m.write + m.delete + m.scan);
        let op = if r < m.read {
            OpKind::Read
        } else if r < m.read + m.write {
            OpKind::Write
        } else if r < m.read + m.write + m.delete {
            OpKind::Delete
        } else {
            OpKind::Scan
        };
        let k = self.key();
        let size = match op {
            OpKind::Scan => self.spec.scan_rows,
            OpKind::Delete => 0,
            _ => self.spec.value_size.of_key(k),
        };
        self.seq += 1;
        Some(TraceOp { op, key: key_name(k), size, tenant: self.tenant, seq: self.seq })
    }
}

/// Operation stream for `tenant`, seeded from `seed` and the tenant number.
pub fn gen_stream(spec: &WorkloadSpec, tenant: usize, seed: u64) -> Result<OpStream> {
    spec.validate()?;
    let n = spec.key_space();
    let sampler = match spec.distribution {
        KeyDistribution::Uniform => Sampler::Uniform(n),
        KeyDistribution::Zipfian { theta } => Sampler::Zipf(Zipf::new(n as f64, theta)?),
        KeyDistribution::Powerlaw { shape } => Sampler::Pareto(Pareto::new(1.0, shape - 1.0)?, n),
    };
    Ok(OpStream {
        spec: spec.clone(),
        tenant,
        rng: ChaCha8Rng::seed_from_u64(derive_seed(seed, tenant as u64)),
        sampler,
        seq: 0,
    })
}

/// Write operations as newline-delimited JSON.
pub fn export_trace<'a>(out: &mut impl Write, ops: impl IntoIterator<Item = &'a TraceOp>) -> Result<()> {
    for op in ops {
        serde_json::to_writer(&mut *out, op)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_trace(text: &str) -> Result<Vec<TraceOp>> {
    let mut ops = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        match serde_json::from_str(line) {
            Ok(op) => ops.push(op),
            Err(e) => bail!("trace line {}: {e}", i + 1),
        }
    }
    Ok(ops)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn key_names_round_trip() {
        for i in [0, 1, 42, 99_999, u64::MAX] {
            assert_eq!(key_index(&key_name(i)), Some(i));
            assert_eq!(key_name(i).len(), 20);
        }
    }

    #[test]
    fn etc_mixes() {
        let rw = etc_mix(EtcKind::Rw);
        assert_eq!((rw.read, rw.write), (30.0 / 31.0, 1.0 / 31.0));
        let rwd = etc_mix(EtcKind::Rwd);
        assert_eq!((rwd.read, rwd.write, rwd.delete), (30.0 / 46.0, 1.0 / 46.0, 15.0 / 46.0));
        rw.validate().unwrap();
        rwd.validate().unwrap();
    }

    #[test]
    fn invalid_mix_rejected() {
        let spec = WorkloadSpec { mix: OpMix { read: 0.5, ..OpMix::default() }, ..WorkloadSpec::default() };
        assert!(gen_stream(&spec, 0, 1).is_err());
    }
}
