use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Max-min refill: choose `x` with `sum(x) = total` and `x >= 0` maximising
/// `u` subject to `consumed[i] + scale[i] * x[i] >= u * weight[i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefillProblem {
    pub consumed: Vec<f64>,
    pub scale: Vec<f64>,
    pub weight: Vec<f64>,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefillSolution {
    /// Whole-credit allocation.
    pub x: Vec<f64>,
    /// Objective value of `x`.
    pub u: f64,
    /// Optimum of the continuous relaxation.
    pub relaxed_x: Vec<f64>,
    pub relaxed_u: f64,
}

impl RefillProblem {
    pub fn new(consumed: Vec<f64>, scale: Vec<f64>, weight: Vec<f64>, total: f64) -> Self {
        RefillProblem { consumed, scale, weight, total }
    }

    /// Unit scales and the given weights.
    pub fn weighted(consumed: &[f64], weight: &[f64], total: f64) -> Self {
        RefillProblem::new(consumed.to_vec(), vec![1.0; consumed.len()], weight.to_vec(), total)
    }

    pub fn len(&self) -> usize {
        self.consumed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.consumed.is_empty()
    }

    fn validate(&self) -> Result<()> {
        let n = self.len();
        if n == 0 {
            return Err(invalid("refill problem has no tenants"));
        }
        if self.scale.len() != n || self.weight.len() != n {
            return Err(invalid("refill vectors differ in length"));
        }
        if !self.total.is_finite() || self.total < 0.0 {
            return Err(invalid(format!("total credits {} must be a non-negative number", self.total)));
        }
        if self.scale.iter().any(|m| !(m.is_finite() && *m > 0.0)) {
            return Err(invalid("scales must be positive"));
        }
        if self.weight.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(invalid("weights must be non-negative"));
        }
        if self.weight.iter().all(|w| *w == 0.0) {
            return Err(invalid("at least one weight must be positive"));
        }
        if self.consumed.iter().any(|b| !b.is_finite()) {
            return Err(invalid("consumed bytes must be finite"));
        }
        Ok(())
    }

    fn level(&self, i: usize, x: f64) -> f64 {
        (self.consumed[i].max(0.0) + self.scale[i] * x) / self.weight[i]
    }

    /// Objective `u` attained by an allocation: the smallest weighted level.
    pub fn objective(&self, x: &[f64]) -> f64 {
        (0..self.len())
            .filter(|&i| self.weight[i] > 0.0)
            .map(|i| self.level(i, x[i]))
            .fold(f64::INFINITY, f64::min)
    }

    /// Solve the continuous problem by water-filling over the tenants in
    /// order of their starting level.
    pub fn solve_relaxed(&self) -> Result<(Vec<f64>, f64)> {
        self.validate()?;
        let b: Vec<f64> = self.consumed.iter().map(|b| b.max(0.0)).collect();
        let mut order: Vec<usize> = (0..self.len()).filter(|&i| self.weight[i] > 0.0).collect();
        order.sort_by(|&i, &j| (b[i] / self.weight[i]).total_cmp(&(b[j] / self.weight[j])));

        let mut num = self.total;
        let mut den = 0.0;
        let mut u = 0.0;
        for (k, &i) in order.iter().enumerate() {
            num += b[i] / self.scale[i];
            den += self.weight[i] / self.scale[i];
            u = num / den;
            match order.get(k + 1) {
                Some(&next) if u > b[next] / self.weight[next] => continue,
                _ => break,
            }
        }
        let x: Vec<f64> = (0..self.len())
            .map(|i| {
                if self.weight[i] > 0.0 {
                    ((u * self.weight[i] - b[i]) / self.scale[i]).max(0.0)
                } else {
                    0.0
                }
            })
            .collect();
        Ok((x, u))
    }

    /// Solve for a whole-credit allocation. Every allocation reaching level
    /// `u` holds at least `need(u)` credits per tenant, so starting from
    /// `need` just below the relaxed optimum and handing out the remaining
    /// credits one at a time to the lowest level finds the best lattice point.
    pub fn solve(&self) -> Result<RefillSolution> {
        let (relaxed_x, relaxed_u) = self.solve_relaxed()?;
        let active = || (0..self.len()).filter(|&i| self.weight[i] > 0.0);
        let drop = active().map(|i| self.scale[i] / self.weight[i]).fold(0.0, f64::max);
        let floor_u = relaxed_u - drop;
        let mut x: Vec<f64> = (0..self.len())
            .map(|i| {
                if self.weight[i] == 0.0 {
                    return 0.0;
                }
                let need = (floor_u * self.weight[i] - self.consumed[i].max(0.0)) / self.scale[i];
                (need - 1e-9).ceil().max(0.0)
            })
            .collect();
        if x.iter().sum::<f64>() > self.total {
            x.iter_mut().for_each(|v| *v = 0.0);
        }
        let mut left = self.total - x.iter().sum::<f64>();
        while left > 0.0 {
            let step = left.min(1.0);
            let i = active()
                .min_by(|&i, &j| self.level(i, x[i]).total_cmp(&self.level(j, x[j])))
                .expect("validated positive weight");
            x[i] += step;
            left -= step;
        }
        let u = self.objective(&x);
        Ok(RefillSolution { x, u, relaxed_x, relaxed_u })
    }
}

/// Allocate `problem.total` credits by the max-min rule.
pub fn lp_refill(problem: &RefillProblem) -> Result<Vec<f64>> {
    Ok(problem.solve()?.x)
}
