use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Sampled reservation fractions along each axis.
pub const GRID: [f64; 8] = [0.125, 0.25, 0.375, 0.5, 0.625, 0.75, 0.875, 1.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    /// Cache fraction.
    pub c: f64,
    /// Disk-credit fraction.
    pub h: f64,
    /// Throughput in ops/sec.
    pub t: f64,
}

/// Offline throughput measurements of one workload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerfProfile {
    pub label: String,
    pub key_repeat_ratio: f64,
    pub grid: Vec<GridPoint>,
    /// Throughput with the whole node reserved.
    pub baseline: f64,
}

impl PerfProfile {
    /// Sample `f(c, h)` at every grid point.
    pub fn sample(label: &str, key_repeat_ratio: f64, baseline: f64, f: impl Fn(f64, f64) -> f64) -> Self {
        let grid = GRID
            .iter()
            .flat_map(|&c| GRID.iter().map(move |&h| (c, h)))
            .map(|(c, h)| GridPoint { c, h, t: f(c, h) })
            .collect();
        PerfProfile { label: label.to_string(), key_repeat_ratio, grid, baseline }
    }
}

/// Bilinear interpolant over a profile's grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerfModel {
    pub label: String,
    pub key_repeat_ratio: f64,
    pub baseline: f64,
    /// `values[ci][hi]` at `GRID[ci]`, `GRID[hi]`.
    values: Vec<Vec<f64>>,
}

fn grid_index(x: f64) -> Option<usize> {
    GRID.iter().position(|g| (g - x).abs() < 1e-9)
}

impl PerfModel {
    pub fn fit(profile: &PerfProfile) -> Result<PerfModel> {
        let mut values = vec![vec![None; GRID.len()]; GRID.len()];
        for p in &profile.grid {
            if !(p.t.is_finite() && p.t >= 0.0) {
                return Err(invalid(format!("profile {} has throughput {}", profile.label, p.t)));
            }
            if let (Some(ci), Some(hi)) = (grid_index(p.c), grid_index(p.h)) {
                values[ci][hi] = Some(p.t);
            }
        }
        let mut out = vec![vec![0.0; GRID.len()]; GRID.len()];
        for (ci, row) in values.iter().enumerate() {
            for (hi, v) in row.iter().enumerate() {
                out[ci][hi] = v.ok_or(Error::IncompleteGrid {
                    label: profile.label.clone(),
                    c: GRID[ci],
                    h: GRID[hi],
                })?;
            }
        }
        Ok(PerfModel {
            label: profile.label.clone(),
            key_repeat_ratio: profile.key_repeat_ratio,
            baseline: profile.baseline,
            values: out,
        })
    }

    /// Interpolated throughput; fractions below the first grid point are
    /// clamped to it.
    pub fn predict(&self, cache: f64, disk: f64) -> f64 {
        let (ci, fc) = cell(cache);
        let (hi, fh) = cell(disk);
        let v = &self.values;
        let lo = v[ci][hi] * (1.0 - fh) + v[ci][hi + 1] * fh;
        let hi_ = v[ci + 1][hi] * (1.0 - fh) + v[ci + 1][hi + 1] * fh;
        lo * (1.0 - fc) + hi_ * fc
    }
}

/// Lower cell index and the offset within the cell, in `[0, 1]`.
fn cell(x: f64) -> (usize, f64) {
    let x = x.clamp(GRID[0], GRID[GRID.len() - 1]);
    let step = GRID[1] - GRID[0];
    let i = (((x - GRID[0]) / step).floor() as usize).min(GRID.len() - 2);
    (i, ((x - GRID[i]) / step).clamp(0.0, 1.0))
}

/// Fraction of accesses that revisit a key seen earlier in the window.
pub fn signature<K: std::hash::Hash + Eq>(window: &[K]) -> f64 {
    if window.is_empty() {
        return 0.0;
    }
    let mut seen = std::collections::HashSet::with_capacity(window.len());
    let repeats = window.iter().filter(|k| !seen.insert(*k)).count();
    repeats as f64 / window.len() as f64
}

/// The model whose key repeat ratio is closest to `ratio`, the lower ratio
/// on ties.
pub fn match_profile(ratio: f64, models: &[PerfModel]) -> Option<&PerfModel> {
    models.iter().min_by(|a, b| {
        let da = (a.key_repeat_ratio - ratio).abs();
        let db = (b.key_repeat_ratio - ratio).abs();
        da.total_cmp(&db).then(a.key_repeat_ratio.total_cmp(&b.key_repeat_ratio))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> PerfModel {
        PerfModel::fit(&PerfProfile::sample("m", 0.0, 100.0, |c, h| 100.0 * c * c + 30.0 * h)).unwrap()
    }

    #[test]
    fn exact_at_grid_points() {
        let m = model();
        for &c in &GRID {
            for &h in &GRID {
                assert!((m.predict(c, h) - (100.0 * c * c + 30.0 * h)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn cell_centre_is_mean_of_corners() {
        let m = model();
        let corners = [(0.25, 0.5), (0.375, 0.5), (0.25, 0.625), (0.375, 0.625)];
        let mean = corners.iter().map(|&(c, h)| m.predict(c, h)).sum::<f64>() / 4.0;
        assert!((m.predict(0.3125, 0.5625) - mean).abs() < 1e-9);
    }

    #[test]
    fn clamps_below_first_point() {
        let m = model();
        assert_eq!(m.predict(0.01, 0.5), m.predict(0.125, 0.5));
    }

    #[test]
    fn incomplete_grid_rejected() {
        let mut p = PerfProfile::sample("x", 0.0, 1.0, |_, _| 1.0);
        p.grid.pop();
        assert!(matches!(PerfModel::fit(&p), Err(Error::IncompleteGrid { .. })));
    }

    #[test]
    fn signatures_and_matching() {
        assert_eq!(signature(&["a", "b", "c"]), 0.0);
        assert_eq!(signature(&["a", "a", "a", "b"]), 0.5);
        let models: Vec<PerfModel> = [0.1, 0.5]
            .iter()
            .map(|&r| PerfModel::fit(&PerfProfile::sample("p", r, 1.0, |_, _| 1.0)).unwrap())
            .collect();
        assert_eq!(match_profile(0.4, &models).unwrap().key_repeat_ratio, 0.5);
        assert_eq!(match_profile(0.3, &models).unwrap().key_repeat_ratio, 0.1);
    }
}
