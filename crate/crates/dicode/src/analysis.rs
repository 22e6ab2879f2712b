//! Closed-form checks of the soft co-design distribution on small discrete
//! design spaces, plus statistical comparison utilities.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{DicodeError, Result};
use crate::rng::rng_from_seed;

/// An explicit, finite design space with exact returns per design.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiscreteDesignSpace {
    pub returns: Vec<f64>,
}

impl DiscreteDesignSpace {
    pub fn new(returns: Vec<f64>) -> Result<Self> {
        if returns.is_empty() {
            return Err(DicodeError::InvalidArgument("empty design space".into()));
        }
        if returns.iter().any(|r| !r.is_finite()) {
            return Err(DicodeError::InvalidArgument(
                "returns must be finite".into(),
            ));
        }
        Ok(DiscreteDesignSpace { returns })
    }
}

/// The entropy-regularized reward-maximizing distribution over designs:
/// probabilities proportional to exp(omega * J), log-sum-exp stabilized.
pub fn soft_codesign_exact(space: &DiscreteDesignSpace, omega: f64) -> Result<Vec<f64>> {
    if omega <= 0.0 {
        return Err(DicodeError::InvalidArgument(format!(
            "omega must be positive, got {omega}"
        )));
    }
    let scaled: Vec<f64> = space.returns.iter().map(|j| omega * j).collect();
    let max = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scaled.iter().map(|s| (s - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / z).collect())
}

/// Objective of the soft co-design problem for an explicit distribution:
/// E_dist[J] + (1/omega) * H(dist).
pub fn brute_force_objective(
    space: &DiscreteDesignSpace,
    dist: &[f64],
    omega: f64,
) -> Result<f64> {
    if dist.len() != space.returns.len() {
        return Err(DicodeError::ShapeMismatch(format!(
            "distribution len {} vs {} designs",
            dist.len(),
            space.returns.len()
        )));
    }
    let sum: f64 = dist.iter().sum();
    if (sum - 1.0).abs() > 1e-9 || dist.iter().any(|&p| p < -1e-12) {
        return Err(DicodeError::InvalidArgument(
            "distribution is not on the simplex".into(),
        ));
    }
    let expected: f64 = dist
        .iter()
        .zip(space.returns.iter())
        .map(|(p, j)| p * j)
        .sum();
    let entropy: f64 = dist
        .iter()
        .map(|&p| if p > 0.0 { -p * p.ln() } else { 0.0 })
        .sum();
    Ok(expected + entropy / omega)
}

/// Exhaustive grid over the (K-1)-simplex at the given resolution, returning
/// the best grid distribution and its objective. Independent oracle for
/// `soft_codesign_exact`; feasible for K <= 3.
pub fn simplex_grid_max(
    space: &DiscreteDesignSpace,
    omega: f64,
    resolution: f64,
) -> Result<(Vec<f64>, f64)> {
    let k = space.returns.len();
    if k > 3 {
        return Err(DicodeError::InvalidArgument(
            "grid search supported for K <= 3".into(),
        ));
    }
    let steps = (1.0 / resolution).round() as usize;
    let mut best = (vec![0.0; k], f64::NEG_INFINITY);
    match k {
        1 => {
            best = (vec![1.0], brute_force_objective(space, &[1.0], omega)?);
        }
        2 => {
            for i in 0..=steps {
                let p = i as f64 / steps as f64;
                let dist = vec![p, 1.0 - p];
                let obj = brute_force_objective(space, &dist, omega)?;
                if obj > best.1 {
                    best = (dist, obj);
                }
            }
        }
        3 => {
            for i in 0..=steps {
                for j in 0..=steps - i {
                    let p0 = i as f64 / steps as f64;
                    let p1 = j as f64 / steps as f64;
                    let dist = vec![p0, p1, 1.0 - p0 - p1];
                    let obj = brute_force_objective(space, &dist, omega)?;
                    if obj > best.1 {
                        best = (dist, obj);
                    }
                }
            }
        }
        _ => unreachable!(),
    }
    Ok(best)
}

/// Exponential moving average with the given smoothing factor; the reported
/// final value is the last smoothed entry.
pub fn ema(values: &[f64], factor: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let mut acc = f64::NAN;
    for &v in values {
        acc = if acc.is_nan() {
            v
        } else {
            factor * acc + (1.0 - factor) * v
        };
        out.push(acc);
    }
    out
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompareReport {
    /// Mean(a) - mean(b).
    pub difference: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_bootstrap: usize,
}

impl CompareReport {
    pub fn excludes_zero(&self) -> bool {
        self.ci_low > 0.0 || self.ci_high < 0.0
    }
}

/// Bootstrap 95% confidence interval for the difference of per-seed final
/// returns between two runs. Requires at least 3 seeds per run.
pub fn compare_runs(finals_a: &[f64], finals_b: &[f64], seed: u64) -> Result<CompareReport> {
    if finals_a.len() < 3 || finals_b.len() < 3 {
        return Err(DicodeError::InvalidArgument(format!(
            "need >= 3 seeds per run, got {} and {}",
            finals_a.len(),
            finals_b.len()
        )));
    }
    let n_bootstrap = 10_000;
    let mut rng = rng_from_seed(seed);
    let mut diffs = Vec::with_capacity(n_bootstrap);
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    for _ in 0..n_bootstrap {
        let ra: Vec<f64> = (0..finals_a.len())
            .map(|_| finals_a[rng.random_range(0..finals_a.len())])
            .collect();
        let rb: Vec<f64> = (0..finals_b.len())
            .map(|_| finals_b[rng.random_range(0..finals_b.len())])
            .collect();
        diffs.push(mean(&ra) - mean(&rb));
    }
    diffs.sort_by(f64::total_cmp);
    let lo_idx = ((n_bootstrap as f64) * 0.025) as usize;
    let hi_idx = ((n_bootstrap as f64) * 0.975) as usize - 1;
    Ok(CompareReport {
        difference: mean(finals_a) - mean(finals_b),
        ci_low: diffs[lo_idx],
        ci_high: diffs[hi_idx],
        n_bootstrap,
    })
}
