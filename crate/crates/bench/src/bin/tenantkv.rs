use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use tenantkv_bench::config::{self, ExperimentConfig, RunOutput};
use tenantkv_bench::metrics::{compare, MetricsReport};
use tenantkv_store::compaction::run_task_file;
use tenantkv_store::engine::root_from_env;

#[derive(Parser)]
#[command(name = "tenantkv", about = "Multi-tenant key-value store experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment config and write its reports.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run a single-tenant config alone and record its throughput.
    Baseline {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Summarise an event file into series.csv and report.json.
    Report {
        #[arg(long)]
        events: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        ramp_s: f64,
        /// Comma-separated per-tenant baselines in ops/sec.
        #[arg(long, value_delimiter = ',')]
        baselines: Option<Vec<f64>>,
    },
    /// Print per-metric differences between two report.json files.
    Compare { a: PathBuf, b: PathBuf },
    /// Execute one compaction task file and print its output as JSON.
    CompactWorker {
        #[arg(long)]
        task: PathBuf,
    },
}

fn load(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if cfg.root.is_none() {
        cfg.root = root_from_env();
    }
    Ok(cfg)
}

fn out_dir(flag: Option<PathBuf>, cfg: &ExperimentConfig) -> PathBuf {
    flag.or_else(|| cfg.out.clone()).unwrap_or_else(|| PathBuf::from("out"))
}

fn read_report(path: &PathBuf) -> Result<MetricsReport> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("{} is not a report", path.display()))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Command::CompactWorker { task } = &cli.command {
        return match run_task_file(task) {
            Ok(out) => {
                let mut stdout = std::io::stdout();
                let _ = serde_json::to_writer(&mut stdout, &out);
                let _ = stdout.flush();
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("{e}");
                ExitCode::FAILURE
            }
        };
    }
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(command: Command) -> Result<ExitCode> {
    match command {
        Command::Run { config, out, seed } => {
            let cfg = load(&config, seed)?;
            let out = out_dir(out, &cfg);
            match config::run(&cfg, &out, std::env::current_exe().ok())? {
                RunOutput::Checks(checks) => {
                    for c in &checks {
                        println!("{}", c.line());
                    }
                }
                RunOutput::Summary(s) => {
                    for t in &s.report.tenants {
                        println!("tenant {} {:.1} ops/s p99 {} us", t.tenant, t.throughput, t.p99_us);
                    }
                    if let (Some(j), Some(d)) = (s.report.j, s.report.d) {
                        println!("J {j:.3} D {d:.3}");
                    }
                }
            }
            println!("reports in {}", out.display());
        }
        Command::Baseline { config, out, seed } => {
            let cfg = load(&config, seed)?;
            let out = out_dir(out, &cfg);
            let b = config::baseline(&cfg, &out)?;
            println!("baseline {:.1} ops/s written to {}", b.throughput, out.join("baseline.json").display());
        }
        Command::Report { events, out, ramp_s, baselines } => {
            let r = config::report(&events, &out, ramp_s, baselines)?;
            println!("{} tenants, valid {}, reports in {}", r.tenants.len(), r.valid, out.display());
        }
        Command::Compare { a, b } => {
            let deltas = compare(&read_report(&a)?, &read_report(&b)?)?;
            println!("{:<28} {:>14} {:>14} {:>14}", "metric", "a", "b", "delta");
            for d in deltas {
                println!("{:<28} {:>14.4} {:>14.4} {:>14.4}", d.metric, d.a, d.b, d.delta);
            }
        }
        Command::CompactWorker { .. } => unreachable!("handled before dispatch"),
    }
    Ok(ExitCode::SUCCESS)
}
