use std::collections::{BTreeMap, HashMap};
use std::sync::Mutex;

use serde::Serialize;

use crate::error::{Error, Result};

pub type TenantId = u32;

#[derive(Debug, Default)]
struct Partition {
    capacity: u64,
    used: u64,
    tick: u64,
    entries: HashMap<Vec<u8>, (Vec<u8>, u64)>,
    order: BTreeMap<u64, Vec<u8>>,
    hits: u64,
    misses: u64,
    evictions: u64,
}

fn entry_size(key: &[u8], value: &[u8]) -> u64 {
    (key.len() + value.len()) as u64
}

impl Partition {
    fn touch(&mut self, key: &[u8]) -> Option<Vec<u8>> {
        self.tick += 1;
        let tick = self.tick;
        let (value, old) = self.entries.get_mut(key).map(|(v, t)| (v.clone(), std::mem::replace(t, tick)))?;
        let k = self.order.remove(&old).expect("order tracks entries");
        self.order.insert(tick, k);
        Some(value)
    }

    fn remove(&mut self, key: &[u8]) {
        if let Some((value, tick)) = self.entries.remove(key) {
            self.order.remove(&tick);
            self.used -= entry_size(key, &value);
        }
    }

    fn evict_to(&mut self, limit: u64) {
        while self.used > limit {
            let Some((_, key)) = self.order.pop_first() else { break };
            let (value, _) = self.entries.remove(&key).expect("order tracks entries");
            self.used -= entry_size(&key, &value);
            self.evictions += 1;
        }
    }

    fn insert(&mut self, key: Vec<u8>, value: Vec<u8>) {
        self.remove(&key);
        let size = entry_size(&key, &value);
        if size > self.capacity {
            return;
        }
        self.evict_to(self.capacity - size);
        self.tick += 1;
        self.used += size;
        self.order.insert(self.tick, key.clone());
        self.entries.insert(key, (value, self.tick));
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TenantCacheStats {
    pub tenant: TenantId,
    pub capacity: u64,
    pub used: u64,
    /// Resident bytes over the whole cache budget.
    pub occupancy: f64,
    pub entries: usize,
    pub hits: u64,
    pub misses: u64,
    pub evictions: u64,
}

impl TenantCacheStats {
    pub fn hit_rate(&self) -> f64 {
        let total = self.hits + self.misses;
        if total == 0 {
            0.0
        } else {
            self.hits as f64 / total as f64
        }
    }
}

/// Process-wide value cache split into per-tenant LRU partitions. A tenant's
/// lookups, inserts and evictions only touch its own partition.
#[derive(Debug)]
pub struct TenantCache {
    budget: u64,
    partitions: Mutex<BTreeMap<TenantId, Partition>>,
}

impl TenantCache {
    pub fn new(budget: u64) -> Self {
        TenantCache { budget, partitions: Mutex::new(BTreeMap::new()) }
    }

    pub fn budget(&self) -> u64 {
        self.budget
    }

    /// Set per-tenant capacities. Shrinking a partition evicts that tenant's
    /// least recently used entries; tenants not listed keep their partition.
    pub fn partition(&self, capacities: &[(TenantId, u64)]) -> Result<()> {
        let mut parts = self.partitions.lock().expect("cache lock");
        let mut total: u64 = parts
            .iter()
            .filter(|(t, _)| !capacities.iter().any(|(c, _)| c == *t))
            .map(|(_, p)| p.capacity)
            .sum();
        for (_, cap) in capacities {
            total = total.saturating_add(*cap);
        }
        if total > self.budget {
            return Err(Error::CacheOverBudget { requested: total, budget: self.budget });
        }
        for &(tenant, cap) in capacities {
            let p = parts.entry(tenant).or_default();
            p.capacity = cap;
            p.evict_to(cap);
        }
        Ok(())
    }

    /// Split the budget evenly over `tenants`.
    pub fn equal_split(&self, tenants: &[TenantId]) -> Result<()> {
        if tenants.is_empty() {
            return Ok(());
        }
        let share = self.budget / tenants.len() as u64;
        let caps: Vec<_> = tenants.iter().map(|&t| (t, share)).collect();
        self.partition(&caps)
    }

    pub fn get(&self, tenant: TenantId, key: &[u8]) -> Option<Vec<u8>> {
        let mut parts = self.partitions.lock().expect("cache lock");
        let p = parts.get_mut(&tenant)?;
        let hit = p.touch(key);
        if hit.is_some() {
            p.hits += 1;
        } else {
            p.misses += 1;
        }
        hit
    }

    pub fn insert(&self, tenant: TenantId, key: &[u8], value: &[u8]) {
        let mut parts = self.partitions.lock().expect("cache lock");
        if let Some(p) = parts.get_mut(&tenant) {
            p.insert(key.to_vec(), value.to_vec());
        }
    }

    pub fn invalidate(&self, tenant: TenantId, key: &[u8]) {
        let mut parts = self.partitions.lock().expect("cache lock");
        if let Some(p) = parts.get_mut(&tenant) {
            p.remove(key);
        }
    }

    /// Drop all of `tenant`'s entries, keeping its capacity and counters.
    pub fn clear_tenant(&self, tenant: TenantId) {
        let mut parts = self.partitions.lock().expect("cache lock");
        if let Some(p) = parts.get_mut(&tenant) {
            p.entries.clear();
            p.order.clear();
            p.used = 0;
        }
    }

    pub fn stats(&self) -> Vec<TenantCacheStats> {
        let parts = self.partitions.lock().expect("cache lock");
        parts
            .iter()
            .map(|(&tenant, p)| TenantCacheStats {
                tenant,
                capacity: p.capacity,
                used: p.used,
                occupancy: if self.budget == 0 { 0.0 } else { p.used as f64 / self.budget as f64 },
                entries: p.entries.len(),
                hits: p.hits,
                misses: p.misses,
                evictions: p.evictions,
            })
            .collect()
    }

    pub fn tenant_stats(&self, tenant: TenantId) -> Option<TenantCacheStats> {
        self.stats().into_iter().find(|s| s.tenant == tenant)
    }
}
