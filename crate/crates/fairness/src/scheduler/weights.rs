use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Per-node weights and budgets derived from global weights and the number
/// of client threads each tenant runs against each node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeWeights {
    /// `credits[i][j]`: tenant `i`'s credits on node `j`.
    pub credits: Vec<Vec<f64>>,
    /// `weights[j][i]`: tenant `i`'s weight on node `j`.
    pub weights: Vec<Vec<f64>>,
    /// Total credits of node `j`.
    pub budgets: Vec<f64>,
}

/// Split each tenant's share `total * W[i]` across nodes in proportion to
/// its thread counts `d[i][j]`. Tenants without threads are left out and the
/// remaining weights renormalised.
pub fn local_weight_adjust(weights: &[f64], threads: &[Vec<u32>], total: f64) -> Result<NodeWeights> {
    let n = weights.len();
    if threads.len() != n {
        return Err(invalid("thread matrix needs one row per tenant"));
    }
    let nodes = threads.first().map_or(0, Vec::len);
    if threads.iter().any(|r| r.len() != nodes) {
        return Err(invalid("thread matrix rows differ in length"));
    }
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) || !(total.is_finite() && total >= 0.0) {
        return Err(invalid("weights and total must be non-negative"));
    }
    let rows: Vec<u64> = threads.iter().map(|r| r.iter().map(|&d| d as u64).sum()).collect();
    let active: f64 = (0..n).filter(|&i| rows[i] > 0).map(|i| weights[i]).sum();

    let credits: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            if rows[i] == 0 || active == 0.0 {
                return vec![0.0; nodes];
            }
            let c = total * weights[i] / active;
            threads[i].iter().map(|&d| c * d as f64 / rows[i] as f64).collect()
        })
        .collect();
    let budgets: Vec<f64> = (0..nodes).map(|j| (0..n).map(|i| credits[i][j]).sum()).collect();
    let node_weights = (0..nodes)
        .map(|j| {
            (0..n)
                .map(|i| if budgets[j] > 0.0 { credits[i][j] / budgets[j] } else { 0.0 })
                .collect()
        })
        .collect();
    Ok(NodeWeights { credits, weights: node_weights, budgets })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinMax {
    pub ratio: f64,
    /// Some tenant had zero (or no) throughput.
    pub starved: bool,
}

/// Smallest over largest throughput.
pub fn minmax_ratio(throughputs: &[f64]) -> MinMax {
    let min = throughputs.iter().copied().fold(f64::INFINITY, f64::min);
    let max = throughputs.iter().copied().fold(0.0, f64::max);
    if throughputs.is_empty() || min <= 0.0 || max <= 0.0 {
        return MinMax { ratio: 0.0, starved: true };
    }
    MinMax { ratio: min / max, starved: false }
}
