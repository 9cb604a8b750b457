//! Workloads, metrics, a node-level scheduling model and the experiments
//! behind the `tenantkv` command.

pub mod config;
pub mod experiments;
pub mod metrics;
pub mod sim;
pub mod workload;
