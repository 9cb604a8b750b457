use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Outcome of one elastic redistribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Elastic {
    pub allocations: Vec<f64>,
    pub relinquished: Vec<f64>,
    /// Tenants that gave part of their allocation away.
    pub slow: Vec<bool>,
}

/// Whole 10% slowdown steps below the expected throughput.
pub fn slowdown_steps(expected: f64, actual: f64) -> u32 {
    let s = (1.0 - actual / expected).max(0.0);
    ((s * 10.0 + 1e-9).floor() as u32).min(10)
}

/// Each tenant running below `expected` gives away 10% of its base
/// allocation per whole 10% of slowdown. The pool is split evenly among the
/// tenants that are not slowed down.
pub fn elastic_redistribute(expected: &[f64], actual: &[f64], base: &[f64]) -> Result<Elastic> {
    let n = base.len();
    if expected.len() != n || actual.len() != n {
        return Err(invalid("expected, actual and base differ in length"));
    }
    if expected.iter().any(|e| !(e.is_finite() && *e > 0.0)) {
        return Err(invalid("expected throughput must be positive"));
    }
    let steps: Vec<u32> = (0..n).map(|i| slowdown_steps(expected[i], actual[i])).collect();
    let busy = steps.iter().filter(|&&s| s == 0).count();
    if busy == 0 {
        return Ok(Elastic { allocations: base.to_vec(), relinquished: vec![0.0; n], slow: vec![false; n] });
    }
    let relinquished: Vec<f64> = (0..n).map(|i| base[i] * steps[i] as f64 / 10.0).collect();
    let share = relinquished.iter().sum::<f64>() / busy as f64;
    let allocations = (0..n)
        .map(|i| if steps[i] == 0 { base[i] + share } else { base[i] - relinquished[i] })
        .collect();
    Ok(Elastic { allocations, relinquished, slow: steps.iter().map(|&s| s > 0).collect() })
}
