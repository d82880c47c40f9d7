//! Pathwise statistics over sets of trajectories.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SliError};
use crate::particle::PathRecord;

/// Empirical pmf with binomial standard errors.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PmfEstimate {
    pub probs: Vec<f64>,
    pub stderr: Vec<f64>,
    pub n_samples: usize,
}

/// A Monte-Carlo mean or probability with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScalarEstimate {
    pub value: f64,
    pub stderr: f64,
    pub n_samples: usize,
}

impl ScalarEstimate {
    /// Frequency estimate of a probability.
    pub fn proportion(hits: usize, n: usize) -> Self {
        let p = hits as f64 / n as f64;
        Self {
            value: p,
            stderr: (p * (1.0 - p) / n as f64).sqrt(),
            n_samples: n,
        }
    }

    /// Sample mean with the standard error from the unbiased variance.
    pub fn mean(values: &[f64]) -> Self {
        let n = values.len();
        let m = values.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        Self {
            value: m,
            stderr: (var / n as f64).sqrt(),
            n_samples: n,
        }
    }

    /// `value ± 2 stderr`.
    pub fn two_sigma(&self) -> (f64, f64) {
        (self.value - 2.0 * self.stderr, self.value + 2.0 * self.stderr)
    }
}

/// Frequencies of terminal levels in `{0..levels-1}`.
pub fn pmf_from_levels(levels_seen: impl IntoIterator<Item = usize>, levels: usize) -> Result<PmfEstimate> {
    let mut counts = vec![0usize; levels];
    let mut n = 0;
    for x in levels_seen {
        if x >= levels {
            return Err(SliError::Domain(format!("level {x} outside {{0..{}}}", levels - 1)));
        }
        counts[x] += 1;
        n += 1;
    }
    if n == 0 {
        return Err(SliError::Domain("empty path set".into()));
    }
    let probs: Vec<f64> = counts.iter().map(|&c| c as f64 / n as f64).collect();
    let stderr = probs.iter().map(|p| (p * (1.0 - p) / n as f64).sqrt()).collect();
    Ok(PmfEstimate {
        probs,
        stderr,
        n_samples: n,
    })
}

/// Empirical law of `X_T` over `{0..M}` (`levels = M + 1`).
pub fn marginal_pmf(paths: &[PathRecord], levels: usize) -> Result<PmfEstimate> {
    pmf_from_levels(paths.iter().map(|p| p.x_terminal), levels)
}

/// `((1/T) ∫_0^T X_u du - K)_+`, computed as `X_T - (1/T) Σ_k t_k - K` from
/// the jump times.
pub fn asian_payoff(path: &PathRecord, strike: f64, horizon: f64) -> f64 {
    let sum: f64 = path.jump_times.iter().sum();
    (path.x_terminal as f64 - sum / horizon - strike).max(0.0)
}

/// Which intervals count toward the longest jump-free interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GapConvention {
    /// Every interval cut out of `[0, T]` by the jumps, including `[t_last, T]`.
    #[default]
    Full,
    /// As `Full` but without the final interval `[t_last, T]` once there is a jump.
    ExcludeTrailing,
}

/// Longest of the intervals cut out of `[0, T]` by the jump times.
pub fn longest_gap(path: &PathRecord, horizon: f64) -> f64 {
    longest_gap_with(path, horizon, GapConvention::Full)
}

pub fn longest_gap_with(path: &PathRecord, horizon: f64, convention: GapConvention) -> f64 {
    let mut prev = 0.0;
    let mut best: f64 = 0.0;
    for &t in &path.jump_times {
        best = best.max(t - prev);
        prev = t;
    }
    match convention {
        GapConvention::ExcludeTrailing if !path.jump_times.is_empty() => best,
        _ => best.max(horizon - prev),
    }
}

/// `P(τ <= s)` for each threshold `s`, from a sample of `τ` values.
pub fn tau_cdf_from_values(taus: &[f64], thresholds: &[f64], horizon: f64) -> Result<Vec<ScalarEstimate>> {
    if taus.is_empty() {
        return Err(SliError::Domain("empty path set".into()));
    }
    Ok(thresholds
        .iter()
        .map(|&s| {
            if s >= horizon {
                // τ <= T holds for every path
                ScalarEstimate {
                    value: 1.0,
                    stderr: 0.0,
                    n_samples: taus.len(),
                }
            } else {
                ScalarEstimate::proportion(taus.iter().filter(|&&t| t <= s).count(), taus.len())
            }
        })
        .collect())
}

pub fn tau_cdf(paths: &[PathRecord], thresholds: &[f64], horizon: f64) -> Result<Vec<ScalarEstimate>> {
    tau_cdf_with(paths, thresholds, horizon, GapConvention::Full)
}

pub fn tau_cdf_with(
    paths: &[PathRecord],
    thresholds: &[f64],
    horizon: f64,
    convention: GapConvention,
) -> Result<Vec<ScalarEstimate>> {
    let taus: Vec<f64> = paths.iter().map(|p| longest_gap_with(p, horizon, convention)).collect();
    tau_cdf_from_values(&taus, thresholds, horizon)
}

/// `½ Σ |p_k - q_k|`; the shorter vector is padded with zeros.
pub fn tv_distance(p: &[f64], q: &[f64]) -> f64 {
    let n = p.len().max(q.len());
    0.5 * (0..n)
        .map(|k| (p.get(k).copied().unwrap_or(0.0) - q.get(k).copied().unwrap_or(0.0)).abs())
        .sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn path(jumps: &[f64]) -> PathRecord {
        PathRecord::new(0, jumps.to_vec())
    }

    #[test]
    fn asian_examples() {
        assert_eq!(asian_payoff(&path(&[]), 0.0, 1.0), 0.0);
        assert_eq!(asian_payoff(&path(&[0.5]), 0.0, 1.0), 0.5);
        assert!((asian_payoff(&path(&[0.2, 0.8]), 0.5, 1.0) - 0.5).abs() < 1e-15);
        assert_eq!(asian_payoff(&path(&[0.2, 0.8]), 5.0, 1.0), 0.0);
    }

    #[test]
    fn gap_examples() {
        assert_eq!(longest_gap(&path(&[]), 2.0), 2.0);
        assert_eq!(longest_gap(&path(&[0.6]), 2.0), 1.4);
        assert_eq!(longest_gap(&path(&[0.5, 1.0, 1.5]), 2.0), 0.5);
        let ex = GapConvention::ExcludeTrailing;
        assert_eq!(longest_gap_with(&path(&[0.6]), 2.0, ex), 0.6);
        assert_eq!(longest_gap_with(&path(&[]), 2.0, ex), 2.0);
        assert_eq!(longest_gap_with(&path(&[0.2, 0.3]), 2.0, ex), 0.2);
    }

    #[test]
    fn pmf_examples() {
        let all_zero = vec![path(&[]); 10];
        let e = marginal_pmf(&all_zero, 4).unwrap();
        assert_eq!(e.probs, vec![1.0, 0.0, 0.0, 0.0]);
        assert!(e.stderr.iter().all(|&s| s == 0.0));
        let one = marginal_pmf(&[path(&[0.1, 0.2])], 4).unwrap();
        assert_eq!(one.probs, vec![0.0, 0.0, 1.0, 0.0]);
        assert_eq!(one.stderr[2], 0.0);
        assert!(marginal_pmf(&[], 4).is_err());
        assert!(marginal_pmf(&[path(&[0.1, 0.2])], 2).is_err());
    }

    #[test]
    fn tau_cdf_threshold_at_horizon_is_one() {
        let paths = vec![path(&[0.3]), path(&[]), path(&[0.1, 0.15])];
        let c = tau_cdf(&paths, &[2.0, 5.0, 0.5], 2.0).unwrap();
        assert_eq!(c[0].value, 1.0);
        assert_eq!(c[1].value, 1.0);
        assert_eq!(c[2].value, 0.0);
    }

    #[test]
    fn scalar_estimates() {
        let e = ScalarEstimate::proportion(25, 100);
        assert_eq!(e.value, 0.25);
        assert!((e.stderr - (0.25f64 * 0.75 / 100.0).sqrt()).abs() < 1e-16);
        let m = ScalarEstimate::mean(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m.value, 2.5);
        assert!((m.stderr - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
        assert_eq!(tv_distance(&[0.5, 0.5], &[1.0]), 0.5);
    }

    proptest! {
        #[test]
        fn gaps_partition_the_horizon(mut jumps in prop::collection::vec(0.0f64..3.0, 0..20)) {
            jumps.sort_by(f64::total_cmp);
            jumps.dedup();
            let horizon = 3.0;
            let tau = longest_gap(&path(&jumps), horizon);
            let mut pts = vec![0.0];
            pts.extend(&jumps);
            pts.push(horizon);
            let total: f64 = pts.windows(2).map(|w| w[1] - w[0]).sum();
            prop_assert!((total - horizon).abs() < 1e-12);
            prop_assert!(tau > 0.0 && tau <= horizon);
        }
    }
}
