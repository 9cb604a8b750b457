//! Per-tenant admission: credit accounts, deficit round robin with max-min
//! or periodic refills, weighted fair queueing, scan splitting and
//! cross-node weight adjustment.

mod account;
mod drr;
mod lp;
mod scan;
mod weights;
mod wfq;

use serde::{Deserialize, Serialize};

pub use account::{CreditAccount, FeedbackWindow, DEFAULT_ESTIMATE, DEFAULT_WINDOW};
pub use drr::{drr_admit, drr_round, refill_all_dry, refill_periodic, DrrCursor, RefillPolicy};
pub use lp::{lp_refill, RefillProblem, RefillSolution};
pub use scan::{merge_pieces, split_scan, ScanPiece, ScanRequest, DEFAULT_PIECE_ROWS};
pub use weights::{local_weight_adjust, minmax_ratio, MinMax, NodeWeights};
pub use wfq::{Tags, WfqState};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    /// First come, first served.
    None,
    Wfq,
    /// Deficit round robin refilled by the max-min rule when all are dry.
    DrrLp,
    /// Deficit round robin refilled from base allocations on a timer.
    DrrPeriodic,
}

/// Scheduler configuration block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SchedulerConfig {
    pub policy: PolicyKind,
    /// Credits handed out per refill.
    pub total_credits: f64,
    pub refill_interval_ms: u64,
    pub window: usize,
    pub default_estimate: f64,
    /// Rows per scan piece; 0 disables splitting.
    pub piece_rows: u64,
    pub weights: Vec<f64>,
    /// Apply elastic redistribution at periodic refills.
    pub elastic: bool,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        SchedulerConfig {
            policy: PolicyKind::DrrLp,
            total_credits: 4.0 * 1024.0 * 1024.0,
            refill_interval_ms: 1000,
            window: DEFAULT_WINDOW,
            default_estimate: DEFAULT_ESTIMATE,
            piece_rows: DEFAULT_PIECE_ROWS,
            weights: Vec::new(),
            elastic: false,
        }
    }
}

impl SchedulerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.total_credits.is_finite() && self.total_credits > 0.0) {
            return Err(invalid("total_credits must be positive"));
        }
        if self.window == 0 {
            return Err(invalid("window must hold at least one entry"));
        }
        if self.weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(invalid("weights must be positive"));
        }
        if self.policy == PolicyKind::DrrPeriodic && self.refill_interval_ms == 0 {
            return Err(invalid("periodic refill needs a non-zero interval"));
        }
        Ok(())
    }

    /// Weights normalised to sum to 1, equal when none are configured.
    pub fn normalized_weights(&self, tenants: usize) -> Vec<f64> {
        if self.weights.len() != tenants {
            return vec![1.0 / tenants as f64; tenants];
        }
        let total: f64 = self.weights.iter().sum();
        self.weights.iter().map(|w| w / total).collect()
    }
}
