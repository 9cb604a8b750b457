use std::collections::VecDeque;

use crate::error::Result;
use crate::planner::Elastic;
use crate::scheduler::account::CreditAccount;
use crate::scheduler::lp::{lp_refill, RefillProblem};
use crate::TenantId;

/// Round-robin position that survives between partial rounds.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DrrCursor {
    pub tenant: TenantId,
}

/// One full round: visit every tenant once, admitting from its queue while
/// its credits cover the estimate of its next request.
pub fn drr_round<T>(
    queues: &mut [VecDeque<T>],
    accounts: &mut [CreditAccount],
    estimates: &[f64],
) -> Vec<(TenantId, T)> {
    drr_admit(queues, accounts, estimates, &mut DrrCursor::default(), usize::MAX)
}

/// Like [`drr_round`] but admits at most `limit` requests. The next call
/// starts after the tenant that was being served when the limit was hit, so
/// tenants alternate when downstream room is the bottleneck.
pub fn drr_admit<T>(
    queues: &mut [VecDeque<T>],
    accounts: &mut [CreditAccount],
    estimates: &[f64],
    cursor: &mut DrrCursor,
    limit: usize,
) -> Vec<(TenantId, T)> {
    let n = queues.len();
    let mut admitted = Vec::new();
    if n == 0 {
        return admitted;
    }
    cursor.tenant %= n;
    for _ in 0..n {
        let t = cursor.tenant;
        while admitted.len() < limit && !queues[t].is_empty() && accounts[t].can_admit(estimates[t]) {
            accounts[t].debit(estimates[t]);
            admitted.push((t, queues[t].pop_front().expect("non-empty queue")));
        }
        cursor.tenant = (t + 1) % n;
        if admitted.len() >= limit {
            break;
        }
    }
    admitted
}

/// Refill policy.
#[derive(Debug, Clone, PartialEq)]
pub enum RefillPolicy {
    /// Refill by the max-min rule once every tenant is dry.
    AllDryLp { total: f64 },
    /// Restore fixed base allocations on a timer.
    Periodic { base: Vec<f64> },
}

/// Refill when every tenant is dry. `dry[i]` is the caller's view of
/// [`CreditAccount::is_dry`]. Returns the grants when a refill happened.
pub fn refill_all_dry(accounts: &mut [CreditAccount], dry: &[bool], total: f64) -> Result<Option<Vec<f64>>> {
    if dry.iter().any(|d| !d) {
        return Ok(None);
    }
    let problem = RefillProblem::new(
        accounts.iter().map(|a| a.consumed).collect(),
        accounts.iter().map(|a| a.scale).collect(),
        accounts.iter().map(|a| a.weight).collect(),
        total,
    );
    let x = lp_refill(&problem)?;
    for (a, x) in accounts.iter_mut().zip(&x) {
        a.grant(*x);
    }
    Ok(Some(x))
}

/// Periodic refill: restore base allocations, or the elastic adjustment of
/// them when given. Slow tenants keep their nominal base credits so they can
/// recover, while their relinquished share is already granted to others.
pub fn refill_periodic(accounts: &mut [CreditAccount], base: &[f64], elastic: Option<&Elastic>) -> Vec<f64> {
    let grants: Vec<f64> = match elastic {
        None => base.to_vec(),
        Some(e) => (0..base.len()).map(|i| if e.slow[i] { base[i] } else { e.allocations[i] }).collect(),
    };
    for (a, g) in accounts.iter_mut().zip(&grants) {
        a.grant(*g);
    }
    grants
}
