//! Experiment configuration files and the `run` / `baseline` / `report`
//! drivers behind the command line.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use log::info;
use serde::{Deserialize, Serialize};
use tenantkv_fairness::planner::{PerfProfile, ReservationPlan};
use tenantkv_fairness::scheduler::{PolicyKind, SchedulerConfig};
use tenantkv_store::compaction::WorkerMode;

use crate::experiments::{
    apply_plan, plan_reservations, prepare_store, profile_tenant, run_named, solo_baselines, summarize, Check, Named,
};
use crate::metrics::{
    measure, read_events, time_series, write_events, write_series_csv, MeasureOptions, MetricsReport,
};
use crate::sim::{simulate, Backend, DeviceConfig, SimConfig, SimTenant, StoreBackend, SyntheticBackend};
use crate::workload::{export_trace, WorkloadSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TenantConfig {
    pub workload: WorkloadSpec,
    #[serde(default = "one")]
    pub weight: f64,
    /// Solo throughput in ops/sec.
    #[serde(default)]
    pub baseline: Option<f64>,
    /// File written by `baseline`; used when `baseline` is unset.
    #[serde(default)]
    pub baseline_file: Option<PathBuf>,
    /// Expected ops/sec for elastic redistribution.
    #[serde(default)]
    pub expected: Option<f64>,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerSetup {
    pub enabled: bool,
    /// Profile files; when empty each tenant is profiled before the run.
    pub profiles: Vec<PathBuf>,
    pub profile_s: f64,
    pub seed: u64,
}

impl Default for PlannerSetup {
    fn default() -> Self {
        PlannerSetup { enabled: false, profiles: Vec::new(), profile_s: 4.0, seed: 1 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    /// Run a named experiment instead of the tenant list below.
    pub experiment: Option<Named>,
    /// Store root; reads are served from it when set.
    pub root: Option<PathBuf>,
    pub tenants: Vec<TenantConfig>,
    pub scheduler: SchedulerConfig,
    pub device: DeviceConfig,
    pub cache_budget: u64,
    pub planner: PlannerSetup,
    pub duration_s: f64,
    pub ramp_s: f64,
    pub out: Option<PathBuf>,
    pub seed: u64,
    pub keep_trace: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            experiment: None,
            root: None,
            tenants: Vec::new(),
            scheduler: SchedulerConfig::default(),
            device: DeviceConfig::default(),
            cache_budget: 0,
            planner: PlannerSetup::default(),
            duration_s: 60.0,
            ramp_s: 5.0,
            out: None,
            seed: 1,
            keep_trace: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineFile {
    pub throughput: f64,
    pub report: MetricsReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Summary {
    #[serde(flatten)]
    pub report: MetricsReport,
    pub baselines: Option<Vec<f64>>,
    pub plan: Option<ReservationPlan>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg: ExperimentConfig =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        cfg.resolve(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    /// Interpret relative paths against the config file's directory.
    pub fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for t in &mut self.tenants {
            if let Some(p) = &mut t.baseline_file {
                fix(p);
            }
        }
        self.planner.profiles.iter_mut().for_each(fix);
    }

    pub fn validate(&self) -> Result<()> {
        if self.experiment.is_some() {
            return Ok(());
        }
        ensure!(!self.tenants.is_empty(), "no tenants configured");
        for t in &self.tenants {
            ensure!(t.weight.is_finite() && t.weight > 0.0, "tenant weights must be positive");
            if let Some(p) = &t.baseline_file {
                ensure!(p.exists(), "baseline file {} does not exist", p.display());
            }
        }
        for p in &self.planner.profiles {
            ensure!(p.exists(), "profile file {} does not exist", p.display());
        }
        self.sim_config()?.validate()
    }

    /// Tenant weights normalised to sum to 1.
    pub fn weights(&self) -> Vec<f64> {
        let total: f64 = self.tenants.iter().map(|t| t.weight).sum();
        self.tenants.iter().map(|t| t.weight / total).collect()
    }

    pub fn sim_config(&self) -> Result<SimConfig> {
        let weights = self.weights();
        Ok(SimConfig {
            tenants: self
                .tenants
                .iter()
                .zip(&weights)
                .map(|(t, &weight)| SimTenant { workload: t.workload.clone(), weight, expected: t.expected })
                .collect(),
            scheduler: self.scheduler.clone(),
            device: self.device.clone(),
            duration_s: self.duration_s,
            ramp_s: self.ramp_s,
            seed: self.seed,
            cache_budget: self.cache_budget,
            cache_shares: None,
            disk_shares: None,
            keep_trace: self.keep_trace,
        })
    }

    /// Baselines from the config, or None when any tenant lacks one.
    pub fn baselines(&self) -> Result<Option<Vec<f64>>> {
        let mut out = Vec::new();
        for t in &self.tenants {
            match (t.baseline, &t.baseline_file) {
                (Some(b), _) => out.push(b),
                (None, Some(p)) => {
                    let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                    let b: BaselineFile = serde_json::from_str(&text)?;
                    out.push(b.throughput);
                }
                (None, None) => return Ok(None),
            }
        }
        Ok(Some(out))
    }

    fn backend(&self) -> Result<Box<dyn Backend>> {
        Ok(match &self.root {
            Some(root) => Box::new(StoreBackend { handle: prepare_store(root, &self.tenants[0].workload)? }),
            None => Box::new(SyntheticBackend),
        })
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_vec_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

/// Outcome of `run`: a summary for tenant runs, checks for named ones.
pub enum RunOutput {
    Summary(Box<Summary>),
    Checks(Vec<Check>),
}

/// Execute a config and write its report files into `out`.
pub fn run(cfg: &ExperimentConfig, out: &Path, exe: Option<PathBuf>) -> Result<RunOutput> {
    cfg.validate()?;
    fs::create_dir_all(out)?;
    if let Some(named) = &cfg.experiment {
        let mode = exe.map_or(WorkerMode::InProcess, |exe| WorkerMode::ChildProcess { exe });
        let (outcome, checks) = run_named(named, cfg.root.as_deref(), &mode)?;
        write_json(&out.join("outcome.json"), &outcome)?;
        let lines: Vec<String> = checks.iter().map(Check::line).collect();
        fs::write(out.join("checks.txt"), lines.join("\n") + "\n")?;
        return Ok(RunOutput::Checks(checks));
    }

    let mut sim = cfg.sim_config()?;
    let mut backend = cfg.backend()?;
    let mut baselines = cfg.baselines()?;
    let mut plan = None;
    if cfg.planner.enabled {
        let profiles = if cfg.planner.profiles.is_empty() {
            let profiles = (0..sim.tenants.len())
                .map(|i| profile_tenant(&sim, i, cfg.planner.profile_s))
                .collect::<Result<Vec<_>>>()?;
            write_json(&out.join("profiles.json"), &profiles)?;
            profiles
        } else {
            cfg.planner
                .profiles
                .iter()
                .map(|p| Ok(serde_json::from_str::<PerfProfile>(&fs::read_to_string(p)?)?))
                .collect::<Result<Vec<_>>>()?
        };
        let b = match &baselines {
            Some(b) => b.clone(),
            None => solo_baselines(&sim, backend.as_mut())?,
        };
        let p = plan_reservations(&sim, &profiles, &b, cfg.planner.seed)?;
        info!("reservation plan {:?}", p.tenants);
        apply_plan(&mut sim, &p);
        sim.scheduler.policy = PolicyKind::DrrPeriodic;
        write_json(&out.join("plan.json"), &p)?;
        baselines = Some(b);
        plan = Some(p);
    }

    let result = simulate(&sim, backend.as_mut())?;
    let mut events = fs::File::create(out.join("events.ndjson"))?;
    write_events(&mut events, &result.events)?;
    write_series_csv(fs::File::create(out.join("series.csv"))?, &time_series(&result.events))?;
    if let Some(trace) = &result.trace {
        export_trace(&mut fs::File::create(out.join("trace.ndjson"))?, trace)?;
    }
    let mut report = summarize(&sim, &result.events, baselines.clone())?;
    if let Some(occ) = &result.cache_occupancy {
        for (t, o) in report.tenants.iter_mut().zip(occ) {
            t.cache_occupancy = Some(*o);
        }
    }
    let summary = Summary { report, baselines, plan };
    write_json(&out.join("report.json"), &summary)?;
    Ok(RunOutput::Summary(Box::new(summary)))
}

/// Run a single-tenant config alone and record its post-ramp throughput.
pub fn baseline(cfg: &ExperimentConfig, out: &Path) -> Result<BaselineFile> {
    cfg.validate()?;
    if cfg.tenants.len() != 1 {
        bail!("baseline needs exactly one tenant, got {}", cfg.tenants.len());
    }
    let mut sim = cfg.sim_config()?;
    sim.scheduler.policy = PolicyKind::None;
    let result = simulate(&sim, cfg.backend()?.as_mut())?;
    let report = summarize(&sim, &result.events, None)?;
    ensure!(report.valid, "baseline run completed no operations after the ramp-up");
    let file = BaselineFile { throughput: report.tenants[0].throughput, report };
    fs::create_dir_all(out)?;
    write_json(&out.join("baseline.json"), &file)?;
    Ok(file)
}

/// Turn an event file into `series.csv` and `report.json`.
pub fn report(events: &Path, out: &Path, ramp_s: f64, baselines: Option<Vec<f64>>) -> Result<MetricsReport> {
    let text = fs::read_to_string(events).with_context(|| format!("reading {}", events.display()))?;
    let events = read_events(&text)?;
    let tenants = baselines.as_ref().map_or(0, Vec::len);
    let opts = MeasureOptions {
        ramp_us: (ramp_s * 1e6) as u64,
        tenants,
        baselines,
        ..MeasureOptions::default()
    };
    let report = measure(&events, &opts)?;
    fs::create_dir_all(out)?;
    write_series_csv(fs::File::create(out.join("series.csv"))?, &time_series(&events))?;
    write_json(&out.join("report.json"), &report)?;
    Ok(report)
}
