use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

pub const DEFAULT_ALPHA: f64 = 0.5;

/// Relative shortfall of `actual` against `baseline`, floored at 0.
pub fn violation(baseline: f64, actual: f64) -> Result<f64> {
    if !(baseline.is_finite() && baseline > 0.0) {
        return Err(invalid(format!("baseline {baseline} must be positive")));
    }
    Ok(((baseline - actual) / baseline).max(0.0))
}

/// Jain's index of the violations; 1 when every violation is 0.
pub fn j_index(v: &[f64]) -> f64 {
    let sum: f64 = v.iter().sum();
    let sq: f64 = v.iter().map(|x| x * x).sum();
    if sq == 0.0 {
        return 1.0;
    }
    sum * sum / (v.len() as f64 * sq)
}

/// One minus the mean violation.
pub fn efficiency(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 1.0;
    }
    1.0 - v.iter().sum::<f64>() / v.len() as f64
}

pub fn d_score(j: f64, e: f64, alpha: f64) -> f64 {
    alpha * j + (1.0 - alpha) * e
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub j: f64,
    pub e: f64,
    pub d: f64,
}

impl Score {
    pub fn of(v: &[f64], alpha: f64) -> Score {
        let j = j_index(v);
        let e = efficiency(v);
        Score { j, e, d: d_score(j, e, alpha) }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn violation_examples() {
        assert_eq!(violation(10.0, 10.0).unwrap(), 0.0);
        assert_eq!(violation(2030.76, 1015.38).unwrap(), 0.5);
        assert_eq!(violation(10.0, 12.0).unwrap(), 0.0);
        assert!(violation(0.0, 1.0).is_err());
    }

    #[test]
    fn index_examples() {
        assert_eq!(j_index(&[0.2, 0.2]), 1.0);
        assert_eq!(j_index(&[0.4, 0.0]), 0.5);
        assert!((j_index(&[0.1, 0.3]) - 0.8).abs() < 1e-15);
        assert_eq!(j_index(&[0.0, 0.0]), 1.0);
        assert_eq!(efficiency(&[0.0, 0.0]), 1.0);
        assert!((efficiency(&[0.2, 0.4]) - 0.7).abs() < 1e-15);
        assert_eq!(efficiency(&[1.0, 1.0]), 0.0);
        assert!((d_score(0.8, 0.7, 0.5) - 0.75).abs() < 1e-15);
        assert_eq!(d_score(0.8, 0.7, 1.0), 0.8);
        assert_eq!(d_score(0.8, 0.7, 0.0), 0.7);
    }
}
