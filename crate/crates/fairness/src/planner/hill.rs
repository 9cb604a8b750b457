use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::planner::metrics::{violation, Score, DEFAULT_ALPHA};
use crate::planner::model::PerfModel;

pub const CACHE: usize = 0;
pub const DISK: usize = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HillClimbOptions {
    pub alpha: f64,
    /// Grid step as a fraction of each resource.
    pub step: f64,
    pub seed: u64,
    pub max_iters: usize,
    /// When no single-unit move improves, also try moving one unit of each
    /// resource at once before stopping.
    pub paired_escape: bool,
}

impl Default for HillClimbOptions {
    fn default() -> Self {
        HillClimbOptions { alpha: DEFAULT_ALPHA, step: 0.05, seed: 0, max_iters: 10_000, paired_escape: true }
    }
}

/// A tenant's reserved fraction of each resource.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Reservation {
    pub cache: f64,
    pub disk: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReservationPlan {
    pub tenants: Vec<Reservation>,
    /// Grid units per tenant, `[cache, disk]`.
    pub units: Vec<[u32; 2]>,
    pub units_per_resource: u32,
    pub score: Score,
    pub iterations: usize,
}

/// Scores unit allocations against per-tenant models and baselines.
pub struct Evaluator<'a> {
    models: &'a [&'a PerfModel],
    baselines: &'a [f64],
    alpha: f64,
    units: u32,
}

impl<'a> Evaluator<'a> {
    pub fn new(models: &'a [&'a PerfModel], baselines: &'a [f64], alpha: f64, units: u32) -> Result<Self> {
        if models.len() != baselines.len() {
            return Err(invalid("one baseline per model is required"));
        }
        if baselines.iter().any(|b| !(b.is_finite() && *b > 0.0)) {
            return Err(invalid("baselines must be positive"));
        }
        if !(0.0..=1.0).contains(&alpha) {
            return Err(invalid(format!("alpha {alpha} outside [0, 1]")));
        }
        Ok(Evaluator { models, baselines, alpha, units })
    }

    pub fn score(&self, units: &[[u32; 2]]) -> Score {
        let u = self.units as f64;
        let v: Vec<f64> = units
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let t = self.models[i].predict(r[CACHE] as f64 / u, r[DISK] as f64 / u);
                violation(self.baselines[i], t).expect("validated baseline")
            })
            .collect();
        Score::of(&v, self.alpha)
    }
}

/// Stochastic hill climbing over grid reservations. Starts from the equal
/// split; each step moves one unit of one resource between two tenants,
/// choosing among improving moves with probability proportional to
/// `exp(gain)`. Stops at a local optimum or after `max_iters` moves.
pub fn hill_climb(models: &[&PerfModel], baselines: &[f64], opts: &HillClimbOptions) -> Result<ReservationPlan> {
    let n = models.len();
    if !(opts.step > 0.0 && opts.step <= 1.0) {
        return Err(invalid(format!("grid step {} outside (0, 1]", opts.step)));
    }
    let units = (1.0 / opts.step).round() as u32;
    if n == 0 {
        return Err(invalid("no tenants to plan for"));
    }
    if n as u32 >= units {
        return Err(Error::TooManyTenants { tenants: n, units });
    }
    let eval = Evaluator::new(models, baselines, opts.alpha, units)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);

    let mut plan = equal_split(n, units);
    let mut score = eval.score(&plan);
    let mut iterations = 0;
    while iterations < opts.max_iters {
        let mut moves = single_moves(&eval, &plan, score);
        if moves.is_empty() && opts.paired_escape {
            moves = paired_moves(&eval, &plan, score);
        }
        if moves.is_empty() {
            break;
        }
        let weights: Vec<f64> = moves.iter().map(|m| m.2.exp()).collect();
        let mut pick = rng.random::<f64>() * weights.iter().sum::<f64>();
        let mut chosen = moves.len() - 1;
        for (i, w) in weights.iter().enumerate() {
            if pick < *w {
                chosen = i;
                break;
            }
            pick -= w;
        }
        let (next, s, _) = moves.swap_remove(chosen);
        plan = next;
        score = s;
        iterations += 1;
    }
    Ok(to_plan(plan, units, score, iterations))
}

type Move = (Vec<[u32; 2]>, Score, f64);

/// Transfers of one unit of resource `r`, as `(from, to)` pairs.
fn transfers(plan: &[[u32; 2]], r: usize) -> Vec<(usize, usize)> {
    let n = plan.len();
    (0..n)
        .filter(|&from| plan[from][r] > 1)
        .flat_map(|from| (0..n).filter(move |&to| to != from).map(move |to| (from, to)))
        .collect()
}

fn improving(eval: &Evaluator, next: Vec<[u32; 2]>, score: Score, out: &mut Vec<Move>) {
    let s = eval.score(&next);
    let gain = s.d - score.d;
    if gain > 1e-12 {
        out.push((next, s, gain));
    }
}

fn single_moves(eval: &Evaluator, plan: &[[u32; 2]], score: Score) -> Vec<Move> {
    let mut out = Vec::new();
    for r in [CACHE, DISK] {
        for (from, to) in transfers(plan, r) {
            let mut next = plan.to_vec();
            next[from][r] -= 1;
            next[to][r] += 1;
            improving(eval, next, score, &mut out);
        }
    }
    out
}

fn paired_moves(eval: &Evaluator, plan: &[[u32; 2]], score: Score) -> Vec<Move> {
    let mut out = Vec::new();
    for (cf, ct) in transfers(plan, CACHE) {
        for (df, dt) in transfers(plan, DISK) {
            let mut next = plan.to_vec();
            next[cf][CACHE] -= 1;
            next[ct][CACHE] += 1;
            next[df][DISK] -= 1;
            next[dt][DISK] += 1;
            improving(eval, next, score, &mut out);
        }
    }
    out
}

/// Equal units per tenant; leftovers go to the lowest-numbered tenants.
pub fn equal_split(n: usize, units: u32) -> Vec<[u32; 2]> {
    let base = units / n as u32;
    let extra = (units % n as u32) as usize;
    (0..n)
        .map(|i| {
            let u = base + (i < extra) as u32;
            [u, u]
        })
        .collect()
}

pub fn to_plan(units: Vec<[u32; 2]>, per: u32, score: Score, iterations: usize) -> ReservationPlan {
    let tenants = units
        .iter()
        .map(|r| Reservation { cache: r[CACHE] as f64 / per as f64, disk: r[DISK] as f64 / per as f64 })
        .collect();
    ReservationPlan { tenants, units, units_per_resource: per, score, iterations }
}
