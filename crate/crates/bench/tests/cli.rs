use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

fn tenantkv(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tenantkv"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .env_remove("TENANTKV_ROOT")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn write(dir: &Path, name: &str, v: &Value) -> String {
    fs::write(dir.join(name), serde_json::to_vec_pretty(v).unwrap()).unwrap();
    name.to_string()
}

fn read(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn two_equal_tenants() -> Value {
    json!({
        "tenants": [
            { "workload": { "threads": 50 } },
            { "workload": { "threads": 50, "seed": 2 } }
        ],
        "scheduler": { "policy": "drr_lp", "total_credits": 10000000.0 },
        "duration_s": 15,
        "ramp_s": 3,
        "keep_trace": true
    })
}

#[test]
fn run_writes_series_and_fair_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "cfg.json", &two_equal_tenants());
    ok(&tenantkv(&["run", "--config", &cfg, "--out", "a"], dir.path()));
    let report = read(&dir.path().join("a/report.json"));
    assert_eq!(report["valid"], true);
    assert!(report["minmax"].as_f64().unwrap() >= 0.95);
    let csv = fs::read_to_string(dir.path().join("a/series.csv")).unwrap();
    assert!(csv.starts_with("time_bucket,tenant,ops,bytes,p50,p99"));
    let events = fs::read_to_string(dir.path().join("a/events.ndjson")).unwrap();
    let csv_ops: u64 = csv.lines().skip(1).map(|l| l.split(',').nth(2).unwrap().parse::<u64>().unwrap()).sum();
    assert_eq!(csv_ops, events.lines().count() as u64);
}

#[test]
fn same_seed_same_trace() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "cfg.json", &two_equal_tenants());
    ok(&tenantkv(&["run", "--config", &cfg, "--out", "a", "--seed", "5"], dir.path()));
    ok(&tenantkv(&["run", "--config", &cfg, "--out", "b", "--seed", "5"], dir.path()));
    ok(&tenantkv(&["run", "--config", &cfg, "--out", "c", "--seed", "6"], dir.path()));
    let trace = |d: &str| fs::read(dir.path().join(d).join("trace.ndjson")).unwrap();
    assert_eq!(trace("a"), trace("b"));
    assert_ne!(trace("a"), trace("c"));
    let tput = |d: &str| {
        let r = read(&dir.path().join(d).join("report.json"));
        r["tenants"].as_array().unwrap().iter().map(|t| t["throughput"].as_f64().unwrap()).sum::<f64>()
    };
    assert!((tput("a") / tput("c") - 1.0).abs() <= 0.1);
}

#[test]
fn baseline_feeds_run_and_self_violation_is_small() {
    let dir = tempfile::tempdir().unwrap();
    let solo = json!({ "tenants": [ { "workload": { "threads": 50 } } ], "duration_s": 15, "ramp_s": 3 });
    let cfg = write(dir.path(), "solo.json", &solo);
    let out = ok(&tenantkv(&["baseline", "--config", &cfg, "--out", "base"], dir.path()));
    assert!(out.contains("baseline"));
    let b = read(&dir.path().join("base/baseline.json"))["throughput"].as_f64().unwrap();
    assert!(b > 0.0);

    let rerun = json!({
        "tenants": [ { "workload": { "threads": 50 }, "baseline_file": "base/baseline.json" } ],
        "scheduler": { "policy": "none" },
        "duration_s": 15,
        "ramp_s": 3
    });
    let cfg = write(dir.path(), "rerun.json", &rerun);
    ok(&tenantkv(&["run", "--config", &cfg, "--out", "rerun", "--seed", "99"], dir.path()));
    let report = read(&dir.path().join("rerun/report.json"));
    assert_eq!(report["baselines"][0].as_f64().unwrap(), b);
    assert!(report["tenants"][0]["violation"].as_f64().unwrap().abs() <= 0.1);
}

#[test]
fn baseline_needs_one_tenant() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "cfg.json", &two_equal_tenants());
    let out = tenantkv(&["baseline", "--config", &cfg, "--out", "x"], dir.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("exactly one tenant"));
}

#[test]
fn report_and_compare() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("empty.ndjson"), "").unwrap();
    ok(&tenantkv(&["report", "--events", "empty.ndjson", "--out", "e"], dir.path()));
    assert_eq!(fs::read_to_string(dir.path().join("e/series.csv")).unwrap().trim(), "time_bucket,tenant,ops,bytes,p50,p99");
    assert_eq!(read(&dir.path().join("e/report.json"))["valid"], false);

    let events: String = (0..200)
        .map(|i| {
            format!(
                "{{\"tenant\":{},\"op\":\"read\",\"start_us\":{},\"end_us\":{},\"bytes\":10,\"cache_hit\":false}}\n",
                i % 2,
                i * 10_000,
                i * 10_000 + 700
            )
        })
        .collect();
    fs::write(dir.path().join("ev.ndjson"), events).unwrap();
    ok(&tenantkv(&["report", "--events", "ev.ndjson", "--out", "r", "--baselines", "50,50"], dir.path()));
    let r = read(&dir.path().join("r/report.json"));
    assert_eq!(r["tenants"][0]["ops"], 100);
    let table = ok(&tenantkv(&["compare", "r/report.json", "r/report.json"], dir.path()));
    let deltas: Vec<f64> =
        table.lines().skip(1).map(|l| l.split_whitespace().last().unwrap().parse().unwrap()).collect();
    assert!(!deltas.is_empty() && deltas.iter().all(|d| *d == 0.0));
    assert!(!tenantkv(&["compare", "r/report.json", "e/report.json"], dir.path()).status.success());
}

#[test]
fn invalid_config_fails_with_message() {
    let dir = tempfile::tempdir().unwrap();
    let bad = json!({ "tenants": [ { "workload": { "mix": { "read": 0.4 } } } ] });
    let cfg = write(dir.path(), "bad.json", &bad);
    let out = tenantkv(&["run", "--config", &cfg], dir.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
    let missing = json!({ "tenants": [ { "workload": {}, "baseline_file": "nope.json" } ] });
    let cfg = write(dir.path(), "missing.json", &missing);
    assert!(!tenantkv(&["run", "--config", &cfg], dir.path()).status.success());
}

#[test]
fn store_root_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("store");
    let cfg = json!({
        "tenants": [ { "workload": { "records": 3000, "threads": 8, "value_size": { "uniform": { "min": 20, "max": 80 } } } } ],
        "duration_s": 3,
        "ramp_s": 1
    });
    let cfg = write(dir.path(), "cfg.json", &cfg);
    let out = Command::new(env!("CARGO_BIN_EXE_tenantkv"))
        .args(["run", "--config", &cfg, "--out", "o"])
        .current_dir(dir.path())
        .env("TENANTKV_ROOT", &root)
        .output()
        .unwrap();
    ok(&out);
    assert!(root.join(tenantkv_store::catalog::MANIFEST_FILE).exists());
    let events = fs::read_to_string(dir.path().join("o/events.ndjson")).unwrap();
    let e: Value = serde_json::from_str(events.lines().next().unwrap()).unwrap();
    assert!((20..=80).contains(&e["bytes"].as_u64().unwrap()));
}

#[test]
fn compact_worker_reports_failure() {
    let dir = tempfile::tempdir().unwrap();
    let out = tenantkv(&["compact-worker", "--task", "missing.json"], dir.path());
    assert!(!out.status.success());
    assert!(!out.stderr.is_empty());
}

#[test]
fn planner_on_scores_at_least_planner_off() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = json!({ "experiment": { "name": "planner", "duration_s": 20, "profile_s": 3 } });
    let cfg = write(dir.path(), "cfg.json", &cfg);
    let out = ok(&tenantkv(&["run", "--config", &cfg, "--out", "p"], dir.path()));
    assert!(out.contains("PASS planner"), "{out}");
    let o = read(&dir.path().join("p/outcome.json"));
    assert!(o["on"]["d"].as_f64().unwrap() >= o["off"]["d"].as_f64().unwrap());
}
