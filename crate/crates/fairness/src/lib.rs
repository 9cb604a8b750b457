//! Multi-tenant admission control and reservation planning.
//!
//! The scheduler meters tenants with byte credits (deficit round robin with
//! max-min refills, or weighted fair queueing as a baseline). The planner
//! scores allocations by fairness and efficiency of throughput violations
//! and searches cache and disk reservations over interpolated profiles.

pub mod error;
pub mod planner;
pub mod scheduler;

pub use error::{Error, Result};

/// Dense tenant index, `0..n`.
pub type TenantId = usize;
