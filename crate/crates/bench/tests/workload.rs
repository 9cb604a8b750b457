use std::collections::HashMap;

use proptest::prelude::*;
use tenantkv_bench::workload::{
    etc_mix, export_trace, gen_stream, read_trace, EtcKind, KeyDistribution, OpKind, OpMix, WorkloadSpec,
};

fn keys(spec: &WorkloadSpec, n: usize, seed: u64) -> Vec<u64> {
    let mut s = gen_stream(spec, 0, seed).unwrap();
    (0..n).map(|_| s.key()).collect()
}

#[test]
fn uniform_frequencies_within_five_sigma() {
    let spec = WorkloadSpec { records: 1000, ..WorkloadSpec::default() };
    let mut counts = vec![0u64; 1000];
    for k in keys(&spec, 100_000, 3) {
        counts[k as usize] += 1;
    }
    // Binomial(100k, 1/1000).
    let sigma = (100_000.0 * 0.001 * 0.999f64).sqrt();
    for (k, &c) in counts.iter().enumerate() {
        assert!((c as f64 - 100.0).abs() <= 5.0 * sigma, "key {k} drawn {c} times");
    }
}

#[test]
fn zipfian_stays_in_subset_and_is_skewed() {
    let spec = WorkloadSpec {
        records: 80_000,
        subset: Some(200),
        distribution: KeyDistribution::Zipfian { theta: 0.99 },
        ..WorkloadSpec::default()
    };
    let ks = keys(&spec, 100_000, 5);
    let inside = ks.iter().filter(|&&k| k < 200).count();
    assert!(inside as f64 >= 0.99 * ks.len() as f64);

    let spec = WorkloadSpec { records: 100_000, subset: Some(10_000), ..spec };
    let mut freq: HashMap<u64, u64> = HashMap::new();
    for k in keys(&spec, 100_000, 7) {
        *freq.entry(k).or_default() += 1;
    }
    let mut counts: Vec<u64> = freq.into_values().collect();
    counts.sort_unstable_by(|a, b| b.cmp(a));
    let top: u64 = counts.iter().take(1000).sum();
    assert!(top as f64 >= 0.5 * 100_000.0, "top 10% drew {top}");
}

/// Slope of log density against log value over logarithmic bins.
fn loglog_slope(values: &[u64]) -> f64 {
    let ratio = 2f64.sqrt();
    let mut edges = vec![1.0f64];
    while *edges.last().unwrap() < 1e4 {
        edges.push(edges.last().unwrap() * ratio);
    }
    let mut counts = vec![0u64; edges.len() - 1];
    for &v in values {
        let x = v as f64;
        if let Some(i) = edges.windows(2).position(|w| x >= w[0] && x < w[1]) {
            counts[i] += 1;
        }
    }
    let pts: Vec<(f64, f64)> = counts
        .iter()
        .enumerate()
        .filter(|(_, &c)| c >= 20)
        .map(|(i, &c)| {
            // Integer support: a bin holds the integers in [ceil(lo), ceil(hi)).
            let width = edges[i + 1].ceil() - edges[i].ceil();
            let centre = (edges[i] * edges[i + 1]).sqrt();
            (centre.ln(), (c as f64 / width).ln())
        })
        .filter(|p| p.1.is_finite())
        .collect();
    let n = pts.len() as f64;
    let (mx, my) = (pts.iter().map(|p| p.0).sum::<f64>() / n, pts.iter().map(|p| p.1).sum::<f64>() / n);
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

#[test]
fn powerlaw_tail_exponent() {
    let spec =
        WorkloadSpec { records: 1_000_000, distribution: KeyDistribution::Powerlaw { shape: 3.2 }, ..WorkloadSpec::default() };
    // Key k stands for value k + 1 of the continuous law.
    let values: Vec<u64> = keys(&spec, 1_000_000, 11).into_iter().map(|k| k + 1).collect();
    let slope = loglog_slope(&values);
    assert!((-slope - 3.2).abs() <= 0.3, "tail exponent {}", -slope);
}

#[test]
fn same_seed_same_trace_bytes() {
    let spec = WorkloadSpec { mix: etc_mix(EtcKind::Rwd), ..WorkloadSpec::default() };
    let dump = |seed| {
        let ops: Vec<_> = gen_stream(&spec, 2, seed).unwrap().take(5000).collect();
        let mut buf = Vec::new();
        export_trace(&mut buf, &ops).unwrap();
        buf
    };
    assert_eq!(dump(9), dump(9));
    assert_ne!(dump(9), dump(10));
    let back = read_trace(std::str::from_utf8(&dump(9)).unwrap()).unwrap();
    assert_eq!(back.len(), 5000);
    assert!(back.iter().all(|o| o.tenant == 2));
}

#[test]
fn trace_fields_follow_the_mix() {
    let spec = WorkloadSpec {
        mix: OpMix { read: 0.5, write: 0.2, delete: 0.1, scan: 0.2 },
        scan_rows: 40,
        ..WorkloadSpec::default()
    };
    let ops: Vec<_> = gen_stream(&spec, 0, 1).unwrap().take(50_000).collect();
    let share = |k: OpKind| ops.iter().filter(|o| o.op == k).count() as f64 / ops.len() as f64;
    assert!((share(OpKind::Read) - 0.5).abs() < 0.01);
    assert!((share(OpKind::Scan) - 0.2).abs() < 0.01);
    for o in &ops {
        match o.op {
            OpKind::Scan => assert_eq!(o.size, 40),
            OpKind::Delete => assert_eq!(o.size, 0),
            _ => assert_eq!(o.size, 1000),
        }
    }
    assert!(ops.windows(2).all(|w| w[1].seq == w[0].seq + 1));
}

#[test]
fn etc_mixes() {
    let rw = etc_mix(EtcKind::Rw);
    assert!((rw.read - 30.0 / 31.0).abs() < 1e-12 && (rw.write - 1.0 / 31.0).abs() < 1e-12);
    let rwd = etc_mix(EtcKind::Rwd);
    assert!((rwd.delete - 15.0 / 46.0).abs() < 1e-12);
    assert!((rwd.read + rwd.write + rwd.delete + rwd.scan - 1.0).abs() < 1e-12);
}

#[test]
fn invalid_specs_rejected() {
    let bad_mix = WorkloadSpec { mix: OpMix { read: 0.5, write: 0.2, delete: 0.0, scan: 0.0 }, ..Default::default() };
    assert!(gen_stream(&bad_mix, 0, 1).is_err());
    let bad_subset = WorkloadSpec { records: 10, subset: Some(11), ..Default::default() };
    assert!(gen_stream(&bad_subset, 0, 1).is_err());
}

proptest! {
    #[test]
    fn keys_stay_in_key_space(records in 1u64..5000, subset in 1u64..5000, seed in any::<u64>(), kind in 0..3u8) {
        let subset = subset.min(records);
        let distribution = match kind {
            0 => KeyDistribution::Uniform,
            1 => KeyDistribution::Zipfian { theta: 0.99 },
            _ => KeyDistribution::Powerlaw { shape: 3.2 },
        };
        let spec = WorkloadSpec { records, subset: Some(subset), distribution, ..WorkloadSpec::default() };
        prop_assert!(keys(&spec, 500, seed).iter().all(|&k| k < subset));
    }
}
