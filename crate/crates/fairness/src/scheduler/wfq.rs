use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{invalid, Result};
use crate::TenantId;

/// Virtual start and finish tags of one request.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tags {
    pub start: f64,
    pub finish: f64,
}

struct Entry<T> {
    tags: Tags,
    seq: u64,
    tenant: TenantId,
    item: T,
}

impl<T> PartialEq for Entry<T> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl<T> Eq for Entry<T> {}

impl<T> PartialOrd for Entry<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<T> Ord for Entry<T> {
    // Reversed so the max-heap pops the smallest finish tag, oldest first.
    fn cmp(&self, other: &Self) -> Ordering {
        other.tags.finish.total_cmp(&self.tags.finish).then(other.seq.cmp(&self.seq))
    }
}

/// Weighted fair queueing over per-tenant virtual finish times.
pub struct WfqState<T> {
    clock: f64,
    last_finish: Vec<f64>,
    /// Virtual time charged per byte, the inverse of the tenant's share.
    rates: Vec<f64>,
    heap: BinaryHeap<Entry<T>>,
    seq: u64,
}

impl<T> WfqState<T> {
    /// `rates[i]` is the virtual cost per byte of tenant `i`.
    pub fn new(rates: Vec<f64>) -> Result<Self> {
        if rates.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(invalid("wfq rates must be positive"));
        }
        Ok(WfqState { clock: 0.0, last_finish: vec![0.0; rates.len()], rates, heap: BinaryHeap::new(), seq: 0 })
    }

    /// Rates from weights: a tenant with twice the weight pays half per byte.
    pub fn from_weights(weights: &[f64]) -> Result<Self> {
        if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(invalid("wfq weights must be positive"));
        }
        let total: f64 = weights.iter().sum();
        WfqState::new(weights.iter().map(|w| total / w).collect())
    }

    pub fn clock(&self) -> f64 {
        self.clock
    }

    pub fn last_finish(&self, tenant: TenantId) -> f64 {
        self.last_finish[tenant]
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    /// Tag a request of `size` bytes: `S = max(v, F_prev)`, `F = S + size * r`.
    pub fn tag(&mut self, tenant: TenantId, size: f64) -> Tags {
        let start = self.clock.max(self.last_finish[tenant]);
        let finish = start + size * self.rates[tenant];
        self.last_finish[tenant] = finish;
        Tags { start, finish }
    }

    pub fn push(&mut self, tenant: TenantId, size: f64, item: T) -> Tags {
        let tags = self.tag(tenant, size);
        self.seq += 1;
        self.heap.push(Entry { tags, seq: self.seq, tenant, item });
        tags
    }

    /// Pop the request with the smallest finish tag and advance the virtual
    /// clock to its start tag.
    pub fn pick(&mut self) -> Option<(TenantId, T, Tags)> {
        let e = self.heap.pop()?;
        self.clock = self.clock.max(e.tags.start);
        Some((e.tenant, e.item, e.tags))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tag_example() {
        let mut s: WfqState<()> = WfqState::new(vec![2.0]).unwrap();
        assert_eq!(s.tag(0, 10.0), Tags { start: 0.0, finish: 20.0 });
    }

    #[test]
    fn back_to_back_requests_chain() {
        let mut s: WfqState<()> = WfqState::new(vec![1.0]).unwrap();
        let a = s.tag(0, 5.0);
        let b = s.tag(0, 5.0);
        assert_eq!(b.start, a.finish);
    }

    #[test]
    fn smallest_finish_is_picked() {
        let mut s = WfqState::new(vec![2.0, 1.5]).unwrap();
        s.push(0, 10.0, "a");
        s.push(1, 10.0, "b");
        let (t, item, tags) = s.pick().unwrap();
        assert_eq!((t, item, tags.finish), (1, "b", 15.0));
    }
}
