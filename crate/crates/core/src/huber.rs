//! Huber losses, gradients, and the weighted minimizer.
//!
//! The minimizer is computed by a reweighting fixed-point iteration
//! (a Weiszfeld-type scheme): each step averages the user means with
//! weights `w_i * min(1, T_i / ||c - y_i||)` and stops once the step
//! norm falls below the configured tolerance.
//!
//! Unlike the classical Weiszfeld iteration there is no singularity at
//! `c == y_i`: the reweighting factor is defined as 1 whenever
//! `||c - y_i|| <= T_i`, which includes distance zero.

use serde::{Deserialize, Serialize};

use crate::dataset::UserSummary;
use crate::error::{HlmError, Result};
use crate::vecmath;

/// Tolerance accepted when checking that weights are normalized.
pub(crate) const WEIGHT_SUM_TOL: f64 = 1e-9;

/// Starting point for the iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum InitStrategy {
    /// One-step exact whenever every mean lies within its threshold of
    /// the weighted mean.
    WeightedMean,
    /// Coordinate-wise weighted median; a safer start under adversarial
    /// tails.
    CoordinateMedian,
    Explicit(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HuberConfig {
    /// Stop when the step norm drops below this value.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub init: InitStrategy,
}

/// Relative stopping factor used by [`HuberConfig::for_max_threshold`].
const RELATIVE_TOLERANCE: f64 = 1e-10;
const MAX_ITERATIONS_CAP: usize = 1_000_000;

impl HuberConfig {
    pub fn new(tolerance: f64, max_iterations: usize, init: InitStrategy) -> Result<Self> {
        if !(tolerance > 0.0) || !tolerance.is_finite() {
            return Err(HlmError::Argument(format!("tolerance must be positive, got {tolerance}")));
        }
        if max_iterations == 0 {
            return Err(HlmError::Argument("max_iterations must be >= 1".into()));
        }
        Ok(Self { tolerance, max_iterations, init })
    }

    /// Default configuration for a problem whose largest threshold is
    /// `max_threshold`: tolerance 1e-10 * max T_i, iteration budget
    /// 10/1e-10 capped at 10^6, weighted-mean start.
    pub fn for_max_threshold(max_threshold: f64) -> Self {
        let budget = (10.0 / RELATIVE_TOLERANCE).min(MAX_ITERATIONS_CAP as f64) as usize;
        Self {
            tolerance: RELATIVE_TOLERANCE * max_threshold,
            max_iterations: budget,
            init: InitStrategy::WeightedMean,
        }
    }
}

/// Output of [`weiszfeld_minimize`]. When `converged` is set the final
/// step norm is below the tolerance, and the weighted Huber gradient at
/// `point` has norm at most twice the tolerance (the gradient of the
/// objective is 1-Lipschitz and the step equals the gradient divided by
/// a reweighting factor of at most 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinimizerResult {
    pub point: Vec<f64>,
    pub iterations: usize,
    pub final_step_norm: f64,
    pub converged: bool,
}

/// Huber loss: quadratic within `t` of `y`, linear beyond; continuous at
/// the junction.
pub fn huber_loss(s: &[f64], y: &[f64], t: f64) -> Result<f64> {
    check_pair(s, y, t)?;
    let r = vecmath::dist(s, y);
    Ok(if r <= t { 0.5 * r * r } else { t * r - 0.5 * t * t })
}

/// Gradient of [`huber_loss`] in its first argument; its norm never
/// exceeds `min(t, ||s - y||)`.
pub fn huber_gradient(s: &[f64], y: &[f64], t: f64) -> Result<Vec<f64>> {
    check_pair(s, y, t)?;
    let r = vecmath::dist(s, y);
    let diff = vecmath::sub(s, y);
    Ok(if r <= t { diff } else { vecmath::scale(&diff, t / r) })
}

fn check_pair(s: &[f64], y: &[f64], t: f64) -> Result<()> {
    if s.len() != y.len() {
        return Err(HlmError::Dimension(format!(
            "point dimensions differ: {} vs {}",
            s.len(),
            y.len()
        )));
    }
    if !(t > 0.0) || !t.is_finite() {
        return Err(HlmError::Argument(format!("threshold must be positive, got {t}")));
    }
    Ok(())
}

/// Weighted sum of per-user Huber losses at `s`.
pub fn objective(s: &[f64], summaries: &[UserSummary]) -> Result<f64> {
    let mut total = 0.0;
    for summary in summaries {
        let w = summary.weight_or_err()?;
        let t = summary.threshold_or_err()?;
        total += w * huber_loss(s, &summary.mean, t)?;
    }
    Ok(total)
}

/// Minimizes the weighted Huber objective over the user means.
///
/// Requires normalized weights and positive thresholds on every summary.
/// If the iteration budget runs out the last iterate is returned with
/// `converged = false` rather than an error, so downstream noise
/// addition still produces output; callers can inspect the flag.
pub fn weiszfeld_minimize(summaries: &[UserSummary], cfg: &HuberConfig) -> Result<MinimizerResult> {
    if summaries.is_empty() {
        return Err(HlmError::Argument("at least one summary is required".into()));
    }
    let dim = summaries[0].mean.len();
    let mut weights = Vec::with_capacity(summaries.len());
    let mut thresholds = Vec::with_capacity(summaries.len());
    for s in summaries {
        if s.mean.len() != dim {
            return Err(HlmError::Dimension("summaries have mixed dimensions".into()));
        }
        weights.push(s.weight_or_err()?);
        thresholds.push(s.threshold_or_err()?);
    }
    let wsum: f64 = weights.iter().sum();
    if (wsum - 1.0).abs() > WEIGHT_SUM_TOL {
        return Err(HlmError::Argument(format!(
            "weights must sum to 1 (got {wsum})"
        )));
    }

    let mut current = match &cfg.init {
        InitStrategy::WeightedMean => weighted_mean(summaries, &weights),
        InitStrategy::CoordinateMedian => coordinate_median(summaries, &weights),
        InitStrategy::Explicit(p) => {
            if p.len() != dim {
                return Err(HlmError::Dimension(format!(
                    "explicit init has dimension {} (expected {dim})",
                    p.len()
                )));
            }
            p.clone()
        }
    };

    let mut iterations = 0;
    let mut step_norm = f64::INFINITY;
    let mut converged = false;
    while iterations < cfg.max_iterations {
        let mut numerator = vec![0.0; dim];
        let mut denominator = 0.0;
        for (i, s) in summaries.iter().enumerate() {
            let r = vecmath::dist(&current, &s.mean);
            let factor = if r <= thresholds[i] { 1.0 } else { thresholds[i] / r };
            vecmath::axpy(&mut numerator, weights[i] * factor, &s.mean);
            denominator += weights[i] * factor;
        }
        if !(denominator > 0.0) || !denominator.is_finite() {
            return Err(HlmError::Numerical("degenerate reweighting denominator".into()));
        }
        let next: Vec<f64> = numerator.iter().map(|v| v / denominator).collect();
        if !vecmath::all_finite(&next) {
            return Err(HlmError::Numerical("non-finite iterate".into()));
        }
        step_norm = vecmath::dist(&next, &current);
        current = next;
        iterations += 1;
        if step_norm < cfg.tolerance {
            converged = true;
            break;
        }
    }

    Ok(MinimizerResult {
        point: current,
        iterations,
        final_step_norm: step_norm,
        converged,
    })
}

fn weighted_mean(summaries: &[UserSummary], weights: &[f64]) -> Vec<f64> {
    let mut mean = vec![0.0; summaries[0].mean.len()];
    for (s, &w) in summaries.iter().zip(weights) {
        vecmath::axpy(&mut mean, w, &s.mean);
    }
    mean
}

fn coordinate_median(summaries: &[UserSummary], weights: &[f64]) -> Vec<f64> {
    let dim = summaries[0].mean.len();
    (0..dim)
        .map(|j| {
            let mut pairs: Vec<(f64, f64)> =
                summaries.iter().zip(weights).map(|(s, &w)| (s.mean[j], w)).collect();
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut acc = 0.0;
            for (v, w) in &pairs {
                acc += w;
                if acc >= 0.5 {
                    return *v;
                }
            }
            pairs.last().map(|(v, _)| *v).unwrap_or(0.0)
        })
        .collect()
}
