use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::TenantId;

pub const DEFAULT_ESTIMATE: f64 = 1024.0;
pub const DEFAULT_WINDOW: usize = 10;

/// Byte credits held by one tenant. One credit pays for `scale` bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreditAccount {
    pub tenant: TenantId,
    pub credits: f64,
    pub weight: f64,
    /// Net bytes charged since the last refill (debits minus refunds).
    pub consumed: f64,
    pub scale: f64,
    /// Credits granted at the last refill.
    pub allocated: f64,
}

impl CreditAccount {
    pub fn new(tenant: TenantId, weight: f64) -> Self {
        CreditAccount { tenant, credits: 0.0, weight, consumed: 0.0, scale: 1.0, allocated: 0.0 }
    }

    /// Build one account per weight, normalising the weights to sum to 1.
    pub fn for_weights(weights: &[f64]) -> Vec<CreditAccount> {
        let total: f64 = weights.iter().sum();
        weights
            .iter()
            .enumerate()
            .map(|(i, w)| CreditAccount::new(i, if total > 0.0 { w / total } else { 0.0 }))
            .collect()
    }

    pub fn can_admit(&self, estimate: f64) -> bool {
        self.scale * self.credits >= estimate
    }

    pub fn debit(&mut self, estimate: f64) {
        self.credits -= estimate / self.scale;
        self.consumed += estimate;
    }

    /// Settle a completed request. A cache hit returns the whole estimate,
    /// otherwise the difference to the actual bytes, which may be negative.
    pub fn refund(&mut self, estimate: f64, actual: f64, served_from_cache: bool) -> f64 {
        let back = if served_from_cache { estimate } else { estimate - actual };
        self.credits += back / self.scale;
        self.consumed -= back;
        back
    }

    /// Grant a fresh allocation; leftover credits and debt are discarded.
    pub fn grant(&mut self, credits: f64) {
        self.credits = credits;
        self.allocated = credits;
        self.consumed = 0.0;
    }

    /// Whether this tenant holds up an all-dry refill. A tenant is dry when
    /// it cannot pay for its next request, or when it has nothing queued and
    /// either nothing in flight or an untouched allocation.
    pub fn is_dry(&self, estimate: f64, queued: usize, in_flight: usize) -> bool {
        if !self.can_admit(estimate) {
            return true;
        }
        queued == 0 && (in_flight == 0 || self.credits >= self.allocated)
    }
}

/// Sizes of a tenant's most recent completed requests.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackWindow {
    ring: VecDeque<f64>,
    capacity: usize,
    default: f64,
}

impl Default for FeedbackWindow {
    fn default() -> Self {
        FeedbackWindow::new(DEFAULT_WINDOW, DEFAULT_ESTIMATE)
    }
}

impl FeedbackWindow {
    pub fn new(capacity: usize, default: f64) -> Self {
        FeedbackWindow { ring: VecDeque::with_capacity(capacity), capacity: capacity.max(1), default }
    }

    pub fn record(&mut self, bytes: f64) {
        if self.ring.len() == self.capacity {
            self.ring.pop_front();
        }
        self.ring.push_back(bytes);
    }

    pub fn len(&self) -> usize {
        self.ring.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ring.is_empty()
    }

    /// Mean of the window, or the configured default when it is empty.
    pub fn estimate(&self) -> f64 {
        if self.ring.is_empty() {
            self.default
        } else {
            self.ring.iter().sum::<f64>() / self.ring.len() as f64
        }
    }
}
