//! Spread statistics, outlier counts, the case-split local-sensitivity
//! bound G, and the smooth sensitivity S for balanced and imbalanced
//! user configurations.
//!
//! The outlier count is computed over an explicit witness family: a
//! kept subset K of users, with every replaced user placed at the mean
//! of K. That placement makes the modified dataset's average equal the
//! kept mean, so the concentration requirement reduces to a condition
//! on K alone. The exact search enumerates kept subsets and is gated to
//! small instances; greedy farthest-point removal is the production
//! path. Greedy can only overestimate the count, which enlarges G and S
//! and therefore preserves their upper-bound role.

use serde::{Deserialize, Serialize};

use crate::dataset::UserSummary;
use crate::error::{HlmError, Result};
use crate::huber::WEIGHT_SUM_TOL;
use crate::vecmath;

/// Privacy budget plus the derived noise-calibration constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyParams {
    pub epsilon: f64,
    pub delta: f64,
    pub alpha: f64,
    pub beta: f64,
    pub dimension: usize,
}

/// Derives (alpha, beta) from the budget:
/// d = 1: alpha = eps/sqrt(ln(1/delta)), beta = eps/(2 ln(1/delta));
/// d > 1: alpha = eps/(5 sqrt(2 ln(2/delta))), beta = eps/(4(d + ln(2/delta))).
pub fn privacy_params(epsilon: f64, delta: f64, d: usize) -> Result<PrivacyParams> {
    if epsilon.is_nan() || epsilon <= 0.0 {
        return Err(HlmError::Argument(format!("epsilon must be positive, got {epsilon}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(HlmError::Argument(format!("delta must lie in (0,1), got {delta}")));
    }
    if d == 0 {
        return Err(HlmError::Argument("dimension must be >= 1".into()));
    }
    let (alpha, beta) = if d == 1 {
        let l = (1.0 / delta).ln();
        (epsilon / l.sqrt(), epsilon / (2.0 * l))
    } else {
        let l = (2.0 / delta).ln();
        (epsilon / (5.0 * (2.0 * l).sqrt()), epsilon / (4.0 * (d as f64 + l)))
    };
    Ok(PrivacyParams { epsilon, delta, alpha, beta, dimension: d })
}

/// Max distance of the means to their unweighted average; returns
/// `(Z, average)`.
pub fn spread_balanced(means: &[Vec<f64>]) -> Result<(f64, Vec<f64>)> {
    if means.is_empty() {
        return Err(HlmError::Argument("at least one mean is required".into()));
    }
    let d = means[0].len();
    let mut avg = vec![0.0; d];
    for m in means {
        if m.len() != d {
            return Err(HlmError::Dimension("means have mixed dimensions".into()));
        }
        vecmath::axpy(&mut avg, 1.0, m);
    }
    for c in &mut avg {
        *c /= means.len() as f64;
    }
    let z = means.iter().map(|m| vecmath::dist(m, &avg)).fold(0.0, f64::max);
    Ok((z, avg))
}

pub(crate) fn weighted_mean_of(summaries: &[UserSummary]) -> Result<Vec<f64>> {
    if summaries.is_empty() {
        return Err(HlmError::Argument("at least one summary is required".into()));
    }
    let d = summaries[0].mean.len();
    let mut avg = vec![0.0; d];
    let mut wsum = 0.0;
    for s in summaries {
        let w = s.weight_or_err()?;
        vecmath::axpy(&mut avg, w, &s.mean);
        wsum += w;
    }
    if (wsum - 1.0).abs() > WEIGHT_SUM_TOL {
        return Err(HlmError::Argument(format!("weights must sum to 1 (got {wsum})")));
    }
    Ok(avg)
}

/// Per-user distances Z_i to the weighted average.
pub fn residuals_weighted(summaries: &[UserSummary]) -> Result<Vec<f64>> {
    let avg = weighted_mean_of(summaries)?;
    Ok(summaries.iter().map(|s| vecmath::dist(&s.mean, &avg)).collect())
}

/// Tail-to-head ratio h(D,k): the top-k users by size contribute
/// `w_i (T_i + Z_i)` to the numerator, everyone else their weight to the
/// denominator. Requires summaries sorted ascending by size and
/// 1 <= k <= n-1.
pub fn h_statistic(sorted: &[UserSummary], k: usize) -> Result<f64> {
    let residuals = residuals_weighted(sorted)?;
    h_from_residuals(sorted, &residuals, k)
}

pub(crate) fn h_from_residuals(sorted: &[UserSummary], residuals: &[f64], k: usize) -> Result<f64> {
    let n = sorted.len();
    if k < 1 || k > n.saturating_sub(1) {
        return Err(HlmError::Argument(format!("k must lie in [1, {}], got {k}", n.saturating_sub(1))));
    }
    debug_assert!(sorted.windows(2).all(|w| w[0].size <= w[1].size), "summaries must be sorted by size");
    let mut num = 0.0;
    for i in n - k..n {
        num += sorted[i].weight_or_err()? * (sorted[i].threshold_or_err()? + residuals[i]);
    }
    let mut den = 0.0;
    for s in sorted.iter().take(n - k) {
        den += s.weight_or_err()?;
    }
    Ok(num / den)
}

/// Outlier-count witness: the kept user indices and the kept-set mean
/// where every replaced user is placed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaResult {
    pub delta: usize,
    pub kept: Vec<usize>,
    pub center: Vec<f64>,
}

/// Kept-subset condition for the balanced witness family:
/// every kept mean lies strictly within T/2 of the kept-set average.
/// Returns the center when satisfied.
pub fn kept_set_condition(means: &[Vec<f64>], kept: &[usize], t: f64) -> Option<Vec<f64>> {
    if kept.is_empty() {
        return None;
    }
    let d = means[0].len();
    let mut center = vec![0.0; d];
    for &i in kept {
        vecmath::axpy(&mut center, 1.0, &means[i]);
    }
    for c in &mut center {
        *c /= kept.len() as f64;
    }
    let ok = kept.iter().all(|&i| vecmath::dist(&means[i], &center) < t / 2.0);
    ok.then_some(center)
}

const EXHAUSTIVE_SUBSET_BUDGET: u128 = 2_000_000;

/// Minimum replacements k <= k_max admitting a kept subset of size n-k
/// that satisfies [`kept_set_condition`]; exhaustive over subsets, so
/// gated by a budget on the number of candidate subsets.
pub fn delta_exact(means: &[Vec<f64>], t: f64, k_max: usize) -> Result<Option<DeltaResult>> {
    check_delta_args(means, t)?;
    let n = means.len();
    let cap = k_max.min(n - 1);
    let mut budget: u128 = 0;
    for k in 0..=cap {
        budget += binomial(n, k);
    }
    if budget > EXHAUSTIVE_SUBSET_BUDGET {
        return Err(HlmError::Argument(format!(
            "exhaustive outlier search over {budget} subsets exceeds the budget; use the greedy method"
        )));
    }
    for k in 0..=cap {
        let mut found: Option<DeltaResult> = None;
        for_each_removed_subset(n, k, &mut |removed| {
            if found.is_some() {
                return;
            }
            let kept: Vec<usize> = (0..n).filter(|i| !removed.contains(i)).collect();
            if let Some(center) = kept_set_condition(means, &kept, t) {
                found = Some(DeltaResult { delta: k, kept, center });
            }
        });
        if found.is_some() {
            return Ok(found);
        }
    }
    Ok(None)
}

/// Iteratively removes the mean farthest from the current kept-set
/// average (ties broken by lowest index) until the kept-set condition
/// holds or `k_max` is exceeded. Never smaller than [`delta_exact`]
/// when both return a value.
pub fn delta_greedy(means: &[Vec<f64>], t: f64, k_max: usize) -> Result<Option<DeltaResult>> {
    check_delta_args(means, t)?;
    let n = means.len();
    let cap = k_max.min(n - 1);
    let mut kept: Vec<usize> = (0..n).collect();
    for removed in 0..=cap {
        if let Some(center) = kept_set_condition(means, &kept, t) {
            return Ok(Some(DeltaResult { delta: removed, kept, center }));
        }
        if removed == cap {
            break;
        }
        // farthest kept point from the current kept mean
        let center = unweighted_mean(means, &kept);
        let (far_pos, _) = kept
            .iter()
            .enumerate()
            .map(|(pos, &i)| (pos, vecmath::dist(&means[i], &center)))
            .fold((0usize, f64::NEG_INFINITY), |acc, (pos, d)| if d > acc.1 { (pos, d) } else { acc });
        kept.remove(far_pos);
    }
    Ok(None)
}

fn check_delta_args(means: &[Vec<f64>], t: f64) -> Result<()> {
    if means.is_empty() {
        return Err(HlmError::Argument("at least one mean is required".into()));
    }
    if !(t > 0.0) || !t.is_finite() {
        return Err(HlmError::Argument(format!("threshold must be positive, got {t}")));
    }
    Ok(())
}

fn unweighted_mean(means: &[Vec<f64>], kept: &[usize]) -> Vec<f64> {
    let mut c = vec![0.0; means[0].len()];
    for &i in kept {
        vecmath::axpy(&mut c, 1.0, &means[i]);
    }
    for v in &mut c {
        *v /= kept.len() as f64;
    }
    c
}

/// Kept-subset condition for the imbalanced witness family: replaced
/// users sit at the weighted kept mean (making it the modified weighted
/// average), and the modified dataset must satisfy
/// `h(D*, k_0) < min_i (T_i - Z_i(D*))`.
pub fn imbalanced_kept_condition(
    summaries: &[UserSummary],
    kept: &[usize],
    k_0: usize,
) -> Result<Option<Vec<f64>>> {
    let n = summaries.len();
    if kept.is_empty() || k_0 < 1 || k_0 > n - 1 {
        return Ok(None);
    }
    let d = summaries[0].mean.len();
    let mut center = vec![0.0; d];
    let mut wsum = 0.0;
    for &i in kept {
        let w = summaries[i].weight_or_err()?;
        vecmath::axpy(&mut center, w, &summaries[i].mean);
        wsum += w;
    }
    if wsum <= 0.0 {
        return Ok(None);
    }
    for c in &mut center {
        *c /= wsum;
    }

    // modified dataset: kept users keep their mean, replaced sit at the center
    let kept_mask = {
        let mut mask = vec![false; n];
        for &i in kept {
            mask[i] = true;
        }
        mask
    };
    let star_residuals: Vec<f64> = (0..n)
        .map(|i| if kept_mask[i] { vecmath::dist(&summaries[i].mean, &center) } else { 0.0 })
        .collect();

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        summaries[a]
            .size
            .cmp(&summaries[b].size)
            .then(star_residuals[a].total_cmp(&star_residuals[b]))
            .then(a.cmp(&b))
    });

    let mut num = 0.0;
    for &i in order.iter().skip(n - k_0) {
        num += summaries[i].weight_or_err()? * (summaries[i].threshold_or_err()? + star_residuals[i]);
    }
    let mut den = 0.0;
    for &i in order.iter().take(n - k_0) {
        den += summaries[i].weight_or_err()?;
    }
    let h_star = num / den;

    let mut min_gap = f64::INFINITY;
    for i in 0..n {
        let gap = summaries[i].threshold_or_err()? - star_residuals[i];
        min_gap = min_gap.min(gap);
    }
    Ok((h_star < min_gap).then_some(center))
}

/// Greedy outlier count for the imbalanced witness family; removes the
/// user farthest from the weighted kept mean at each step.
pub fn delta_greedy_imbalanced(
    summaries: &[UserSummary],
    k_0: usize,
    k_max: usize,
) -> Result<Option<DeltaResult>> {
    let n = summaries.len();
    if n == 0 {
        return Err(HlmError::Argument("at least one summary is required".into()));
    }
    let cap = k_max.min(n - 1);
    let mut kept: Vec<usize> = (0..n).collect();
    for removed in 0..=cap {
        if let Some(center) = imbalanced_kept_condition(summaries, &kept, k_0)? {
            return Ok(Some(DeltaResult { delta: removed, kept, center }));
        }
        if removed == cap {
            break;
        }
        let center = weighted_kept_mean(summaries, &kept)?;
        let (far_pos, _) = kept
            .iter()
            .enumerate()
            .map(|(pos, &i)| (pos, vecmath::dist(&summaries[i].mean, &center)))
            .fold((0usize, f64::NEG_INFINITY), |acc, (pos, d)| if d > acc.1 { (pos, d) } else { acc });
        kept.remove(far_pos);
    }
    Ok(None)
}

/// Exhaustive counterpart of [`delta_greedy_imbalanced`], gated by the
/// same subset budget as [`delta_exact`].
pub fn delta_exact_imbalanced(
    summaries: &[UserSummary],
    k_0: usize,
    k_max: usize,
) -> Result<Option<DeltaResult>> {
    let n = summaries.len();
    if n == 0 {
        return Err(HlmError::Argument("at least one summary is required".into()));
    }
    let cap = k_max.min(n - 1);
    let mut budget: u128 = 0;
    for k in 0..=cap {
        budget += binomial(n, k);
    }
    if budget > EXHAUSTIVE_SUBSET_BUDGET {
        return Err(HlmError::Argument(format!(
            "exhaustive outlier search over {budget} subsets exceeds the budget; use the greedy method"
        )));
    }
    for k in 0..=cap {
        let mut found: Option<DeltaResult> = None;
        let mut err: Option<HlmError> = None;
        for_each_removed_subset(n, k, &mut |removed| {
            if found.is_some() || err.is_some() {
                return;
            }
            let kept: Vec<usize> = (0..n).filter(|i| !removed.contains(i)).collect();
            match imbalanced_kept_condition(summaries, &kept, k_0) {
                Ok(Some(center)) => found = Some(DeltaResult { delta: k, kept, center }),
                Ok(None) => {}
                Err(e) => err = Some(e),
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
        if found.is_some() {
            return Ok(found);
        }
    }
    Ok(None)
}

fn weighted_kept_mean(summaries: &[UserSummary], kept: &[usize]) -> Result<Vec<f64>> {
    let mut c = vec![0.0; summaries[0].mean.len()];
    let mut wsum = 0.0;
    for &i in kept {
        let w = summaries[i].weight_or_err()?;
        vecmath::axpy(&mut c, w, &summaries[i].mean);
        wsum += w;
    }
    for v in &mut c {
        *v /= wsum;
    }
    Ok(c)
}

/// Which branch of the case split produced a G value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GCase {
    NoOutliers,
    FewOutliers,
    Fallback,
}

/// Case-split bound for balanced users:
/// (a) k = 0 and Z < (1 - 2/n) T: (T + Z)/(n - 1);
/// (b) outlier count defined and k <= n/4 - 1 - delta: 2T/(n - k - delta);
/// (c) otherwise 2 R_c.
pub fn g_balanced(
    z: f64,
    delta_hat: Option<usize>,
    t: f64,
    r_c: f64,
    n: usize,
    k: usize,
) -> (f64, GCase) {
    if k == 0 && n >= 2 && z < (1.0 - 2.0 / n as f64) * t {
        return ((t + z) / (n as f64 - 1.0), GCase::NoOutliers);
    }
    if let Some(delta) = delta_hat {
        if (k as f64) <= n as f64 / 4.0 - 1.0 - delta as f64 {
            return (2.0 * t / (n - k - delta) as f64, GCase::FewOutliers);
        }
    }
    (2.0 * r_c, GCase::Fallback)
}

/// Precomputed state for evaluating the imbalanced case-split bound at
/// many k values: the k = 0 concentration test, the largest weighted
/// threshold, and prefix weight sums for the denominators.
struct ImbalancedGContext {
    n: usize,
    k_0: usize,
    r_c: f64,
    h1: f64,
    min_gap: f64,
    max_wt: f64,
    prefix_w: Vec<f64>,
}

impl ImbalancedGContext {
    fn new(sorted: &[UserSummary], residuals: &[f64], k_0: usize, r_c: f64) -> Result<Self> {
        let n = sorted.len();
        if n == 0 {
            return Err(HlmError::Argument("at least one summary is required".into()));
        }
        let h1 = if n >= 2 { h_from_residuals(sorted, residuals, 1)? } else { f64::INFINITY };
        let mut min_gap = f64::INFINITY;
        let mut max_wt = 0.0f64;
        let mut prefix_w = Vec::with_capacity(n + 1);
        prefix_w.push(0.0);
        for (s, &z) in sorted.iter().zip(residuals) {
            let w = s.weight_or_err()?;
            let t = s.threshold_or_err()?;
            min_gap = min_gap.min(t - z);
            max_wt = max_wt.max(w * t);
            prefix_w.push(prefix_w.last().unwrap() + w);
        }
        Ok(Self { n, k_0, r_c, h1, min_gap, max_wt, prefix_w })
    }

    fn eval(&self, delta_hat: Option<usize>, k: usize) -> (f64, GCase) {
        if k == 0 && self.n >= 2 && self.h1 <= self.min_gap {
            return (self.h1, GCase::NoOutliers);
        }
        if let Some(delta) = delta_hat {
            if k + delta < self.k_0 && self.n > delta + k + 1 {
                let den = self.prefix_w[self.n - delta - k - 1];
                return (2.0 * self.max_wt / den, GCase::FewOutliers);
            }
        }
        (2.0 * self.r_c, GCase::Fallback)
    }
}

/// Case-split bound for imbalanced users; summaries must be sorted
/// ascending by size with residuals in the same order. An empty
/// denominator range (n - delta - k - 1 < 1) falls back to case (c).
pub fn g_imbalanced(
    sorted: &[UserSummary],
    residuals: &[f64],
    delta_hat: Option<usize>,
    k_0: usize,
    r_c: f64,
    k: usize,
) -> Result<(f64, GCase)> {
    Ok(ImbalancedGContext::new(sorted, residuals, k_0, r_c)?.eval(delta_hat, k))
}

/// Result of the k-scan over the decay-weighted G profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothScan {
    pub value: f64,
    pub g_profile: Vec<(usize, f64)>,
    pub case_taken: GCase,
}

/// S = max over k in 0..=n of e^(-beta k) G(k). Once G has entered the
/// fallback branch the remaining terms form a decaying constant-G
/// envelope, so the scan stops at the first fallback term below the
/// running maximum.
pub fn smooth_sensitivity<F>(mut g: F, beta: f64, n: usize) -> SmoothScan
where
    F: FnMut(usize) -> (f64, GCase),
{
    let mut best = f64::NEG_INFINITY;
    let mut best_case = GCase::Fallback;
    let mut profile = Vec::new();
    for k in 0..=n {
        let (value, case) = g(k);
        profile.push((k, value));
        let term = (-beta * k as f64).exp() * value;
        if term > best {
            best = term;
            best_case = case;
        } else if case == GCase::Fallback {
            break;
        }
    }
    SmoothScan { value: best, g_profile: profile, case_taken: best_case }
}

/// Search strategy used for the outlier count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DeltaMethod {
    Exact,
    Greedy,
}

/// Everything the noise calibration saw: spread, per-user residuals,
/// outlier count and how it was obtained, the scanned G profile, and
/// the resulting smooth sensitivity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub z_max: f64,
    pub residuals: Vec<f64>,
    pub delta_hat: Option<usize>,
    pub delta_method: DeltaMethod,
    pub g_profile: Vec<(usize, f64)>,
    pub smooth_sensitivity: f64,
    pub case_taken: GCase,
}

/// Assembles the full report for balanced users: spread, outlier count
/// (searched up to the largest value case (b) can use), and the k-scan.
pub fn balanced_report(
    means: &[Vec<f64>],
    t: f64,
    r_c: f64,
    beta: f64,
    method: DeltaMethod,
) -> Result<SensitivityReport> {
    if !(r_c > 0.0) {
        return Err(HlmError::Argument(format!("clip radius must be positive, got {r_c}")));
    }
    let n = means.len();
    let (z, avg) = spread_balanced(means)?;
    let residuals: Vec<f64> = means.iter().map(|m| vecmath::dist(m, &avg)).collect();
    let k_max = (n as f64 / 4.0 - 1.0).floor().max(0.0) as usize;
    let delta = match method {
        DeltaMethod::Exact => delta_exact(means, t, k_max)?,
        DeltaMethod::Greedy => delta_greedy(means, t, k_max)?,
    };
    let delta_hat = delta.as_ref().map(|d| d.delta);
    let scan = smooth_sensitivity(|k| g_balanced(z, delta_hat, t, r_c, n, k), beta, n);
    Ok(SensitivityReport {
        z_max: z,
        residuals,
        delta_hat,
        delta_method: method,
        g_profile: scan.g_profile,
        smooth_sensitivity: scan.value,
        case_taken: scan.case_taken,
    })
}

/// Sorts summaries ascending by size, breaking ties by residual so that
/// with equal sizes the top slice of h takes the largest spreads; this
/// makes the equal-size case coincide with the balanced bound.
pub fn sort_for_imbalance(summaries: &[UserSummary]) -> Result<(Vec<UserSummary>, Vec<f64>)> {
    let residuals = residuals_weighted(summaries)?;
    let mut order: Vec<usize> = (0..summaries.len()).collect();
    order.sort_by(|&a, &b| {
        summaries[a]
            .size
            .cmp(&summaries[b].size)
            .then(residuals[a].total_cmp(&residuals[b]))
            .then(a.cmp(&b))
    });
    let sorted: Vec<UserSummary> = order.iter().map(|&i| summaries[i].clone()).collect();
    let sorted_res: Vec<f64> = order.iter().map(|&i| residuals[i]).collect();
    Ok((sorted, sorted_res))
}

/// Assembles the full report for imbalanced users. Residuals are
/// reported in the sorted (ascending size) order used by the scan.
pub fn imbalanced_report(
    summaries: &[UserSummary],
    k_0: usize,
    r_c: f64,
    beta: f64,
    method: DeltaMethod,
) -> Result<SensitivityReport> {
    if !(r_c > 0.0) {
        return Err(HlmError::Argument(format!("clip radius must be positive, got {r_c}")));
    }
    let n = summaries.len();
    if k_0 < 1 || k_0 > n.saturating_sub(1) {
        return Err(HlmError::Condition(format!(
            "k_0 must lie in [1, {}], got {k_0}; too few users for this gamma",
            n.saturating_sub(1)
        )));
    }
    let (sorted, residuals) = sort_for_imbalance(summaries)?;
    let k_max = k_0.saturating_sub(1);
    let delta = match method {
        DeltaMethod::Exact => delta_exact_imbalanced(&sorted, k_0, k_max)?,
        DeltaMethod::Greedy => delta_greedy_imbalanced(&sorted, k_0, k_max)?,
    };
    let delta_hat = delta.as_ref().map(|d| d.delta);
    let ctx = ImbalancedGContext::new(&sorted, &residuals, k_0, r_c)?;
    let scan = smooth_sensitivity(|k| ctx.eval(delta_hat, k), beta, n);
    let z_max = residuals.iter().copied().fold(0.0, f64::max);
    Ok(SensitivityReport {
        z_max,
        residuals,
        delta_hat,
        delta_method: method,
        g_profile: scan.g_profile,
        smooth_sensitivity: scan.value,
        case_taken: scan.case_taken,
    })
}

fn binomial(n: usize, k: usize) -> u128 {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc
}

/// Visits all k-subsets of 0..n in lexicographic order.
fn for_each_removed_subset(n: usize, k: usize, f: &mut dyn FnMut(&[usize])) {
    if k == 0 {
        f(&[]);
        return;
    }
    if k > n {
        return;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        f(&idx);
        // advance to the next combination
        let mut i = k;
        loop {
            if i == 0 {
                return;
            }
            i -= 1;
            if idx[i] != i + n - k {
                break;
            }
            if i == 0 {
                return;
            }
        }
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn params_d1() {
        let p = privacy_params(1.0, (-4.0f64).exp(), 1).unwrap();
        assert_relative_eq!(p.alpha, 0.5, max_relative = 1e-12);
        assert_relative_eq!(p.beta, 0.125, max_relative = 1e-12);
        let p2 = privacy_params(2.0, (-4.0f64).exp(), 1).unwrap();
        assert_relative_eq!(p2.alpha, 2.0 * p.alpha, max_relative = 1e-12);
        assert_relative_eq!(p2.beta, 2.0 * p.beta, max_relative = 1e-12);
    }

    #[test]
    fn params_high_dim() {
        // delta = 2 e^-8 so ln(2/delta) = 8
        let p = privacy_params(1.0, 2.0 * (-8.0f64).exp(), 3).unwrap();
        assert_relative_eq!(p.alpha, 0.05, max_relative = 1e-12);
        assert_relative_eq!(p.beta, 1.0 / 44.0, max_relative = 1e-12);
    }

    #[test]
    fn params_rejects_bad_delta() {
        assert!(privacy_params(1.0, 1.0, 1).is_err());
        assert!(privacy_params(1.0, 0.0, 1).is_err());
        assert!(privacy_params(1.0, -0.5, 1).is_err());
    }

    #[test]
    fn spread_examples() {
        let (z, avg) = spread_balanced(&[vec![1.0, 2.0], vec![1.0, 2.0]]).unwrap();
        assert_eq!(z, 0.0);
        assert_eq!(avg, vec![1.0, 2.0]);
        let (z, avg) = spread_balanced(&[vec![0.0], vec![2.0]]).unwrap();
        assert_eq!(avg, vec![1.0]);
        assert_eq!(z, 1.0);
    }

    #[test]
    fn spread_translation_invariant() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let means: Vec<Vec<f64>> = (0..8)
            .map(|_| (0..3).map(|_| rng.gen_range(-4.0..4.0)).collect())
            .collect();
        let (z0, _) = spread_balanced(&means).unwrap();
        let shifted: Vec<Vec<f64>> =
            means.iter().map(|m| m.iter().map(|v| v + 13.25).collect()).collect();
        let (z1, _) = spread_balanced(&shifted).unwrap();
        assert!((z0 - z1).abs() < 1e-12);
    }

    #[test]
    fn weighted_residuals_shapes() {
        // identical means: all residuals zero
        let s = uniform_summaries(&[0.7; 5], 1.0);
        assert!(residuals_weighted(&s).unwrap().iter().all(|&z| z == 0.0));
        // asymmetric weights move the average
        let mut s = uniform_summaries(&[0.0, 2.0], 1.0);
        s[0].weight = Some(0.75);
        s[1].weight = Some(0.25);
        let z = residuals_weighted(&s).unwrap();
        assert_relative_eq!(z[0], 0.5, max_relative = 1e-12);
        assert_relative_eq!(z[1], 1.5, max_relative = 1e-12);
        // translation invariance
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let pts: Vec<f64> = (0..6).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let base = residuals_weighted(&uniform_summaries(&pts, 1.0)).unwrap();
        let shifted: Vec<f64> = pts.iter().map(|p| p + 42.5).collect();
        let moved = residuals_weighted(&uniform_summaries(&shifted, 1.0)).unwrap();
        for (a, b) in base.iter().zip(&moved) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    fn uniform_summaries(points: &[f64], t: f64) -> Vec<UserSummary> {
        let n = points.len();
        points
            .iter()
            .map(|&p| UserSummary {
                mean: vec![p],
                size: 1,
                weight: Some(1.0 / n as f64),
                threshold: Some(t),
            })
            .collect()
    }

    #[test]
    fn h_statistic_balanced_forms() {
        // n=10, all Z_i = 0 (coincident), T=1, k=2: 2T/8
        let s = uniform_summaries(&[0.5; 10], 1.0);
        assert_relative_eq!(h_statistic(&s, 2).unwrap(), 0.25, max_relative = 1e-12);
        // k = n-1: denominator is w_1
        let h = h_statistic(&s, 9).unwrap();
        assert_relative_eq!(h, 9.0 * (1.0 / 10.0) * 1.0 / (1.0 / 10.0), max_relative = 1e-12);
        // k=1 with a spread point last
        let mut pts = vec![0.0; 9];
        pts.push(0.9);
        let s = uniform_summaries(&pts, 2.0);
        let res = residuals_weighted(&s).unwrap();
        let h = h_from_residuals(&s, &res, 1).unwrap();
        assert_relative_eq!(h, (2.0 + res[9]) / 9.0, max_relative = 1e-12);
        assert!(h_statistic(&s, 0).is_err());
        assert!(h_statistic(&s, 10).is_err());
    }

    #[test]
    fn delta_zero_when_concentrated() {
        let means = vec![vec![0.0], vec![0.1], vec![0.2]];
        let exact = delta_exact(&means, 1.0, 2).unwrap().unwrap();
        assert_eq!(exact.delta, 0);
        let greedy = delta_greedy(&means, 1.0, 2).unwrap().unwrap();
        assert_eq!(greedy.delta, 0);
    }

    #[test]
    fn delta_single_outlier() {
        let means = vec![vec![0.0], vec![0.1], vec![100.0]];
        let exact = delta_exact(&means, 1.0, 2).unwrap().unwrap();
        assert_eq!(exact.delta, 1);
        assert_eq!(exact.kept, vec![0, 1]);
        let greedy = delta_greedy(&means, 1.0, 2).unwrap().unwrap();
        assert_eq!(greedy.delta, 1);
    }

    #[test]
    fn delta_all_far_apart() {
        let means = vec![vec![0.0], vec![10.0], vec![20.0], vec![30.0]];
        let exact = delta_exact(&means, 1.0, 3).unwrap().unwrap();
        assert_eq!(exact.delta, 3);
        assert!(delta_exact(&means, 1.0, 2).unwrap().is_none());
        assert!(delta_greedy(&means, 1.0, 2).unwrap().is_none());
    }

    #[test]
    fn greedy_upper_bounds_exact_and_witnesses_hold() {
        let mut rng = ChaCha12Rng::seed_from_u64(23);
        for _ in 0..200 {
            let n = rng.gen_range(2..=10);
            let d = rng.gen_range(1..=3);
            let means: Vec<Vec<f64>> = (0..n)
                .map(|_| {
                    let spread = if rng.gen_bool(0.3) { 5.0 } else { 0.4 };
                    (0..d).map(|_| rng.gen_range(-spread..spread)).collect()
                })
                .collect();
            let t = rng.gen_range(0.5..3.0);
            let exact = delta_exact(&means, t, n - 1).unwrap();
            let greedy = delta_greedy(&means, t, n - 1).unwrap();
            if let (Some(e), Some(g)) = (&exact, &greedy) {
                assert!(g.delta >= e.delta);
                assert!(kept_set_condition(&means, &e.kept, t).is_some());
                assert!(kept_set_condition(&means, &g.kept, t).is_some());
            }
        }
    }

    #[test]
    fn g_balanced_cases() {
        // case (a): n=11, T=1, Z=0.4, k=0
        let (v, c) = g_balanced(0.4, Some(0), 1.0, 1.0, 11, 0);
        assert_relative_eq!(v, 0.14, max_relative = 1e-12);
        assert_eq!(c, GCase::NoOutliers);
        // case (b): n=100, delta=1, k=3, T=1
        let (v, c) = g_balanced(10.0, Some(1), 1.0, 1.0, 100, 3);
        assert_relative_eq!(v, 2.0 / 96.0, max_relative = 1e-12);
        assert_eq!(c, GCase::FewOutliers);
        // case (c): k beyond range
        let (v, c) = g_balanced(10.0, Some(1), 1.0, 3.0, 100, 30);
        assert_eq!(v, 6.0);
        assert_eq!(c, GCase::Fallback);
    }

    #[test]
    fn g_imbalanced_reduces_to_balanced_shape() {
        // equal weights/thresholds, delta=0, k=0, case (b): 2(T/n)/((n-1)/n) = 2T/(n-1)
        let n = 10;
        let pts: Vec<f64> = (0..n).map(|i| 10.0 * i as f64).collect();
        let s = uniform_summaries(&pts, 1.0);
        let res = residuals_weighted(&s).unwrap();
        let (v, c) = g_imbalanced(&s, &res, Some(0), 5, 100.0, 0).unwrap();
        assert_relative_eq!(v, 2.0 / 9.0, max_relative = 1e-12);
        assert_eq!(c, GCase::FewOutliers);
        // fallback at k >= k_0
        let (v, c) = g_imbalanced(&s, &res, Some(0), 5, 100.0, 5).unwrap();
        assert_eq!(v, 200.0);
        assert_eq!(c, GCase::Fallback);
    }

    #[test]
    fn g_imbalanced_empty_denominator_falls_back() {
        let s = uniform_summaries(&[0.0, 1.0], 1.0);
        let res = residuals_weighted(&s).unwrap();
        // n=2, delta=0, k=1 would need n-0-1-1 = 0 head users
        let (v, c) = g_imbalanced(&s, &res, Some(0), 1, 5.0, 1).unwrap();
        assert_eq!(v, 10.0);
        assert_eq!(c, GCase::Fallback);
    }

    #[test]
    fn scan_matches_direct_enumeration() {
        // n=8 coincident points, T=1, R_c=1, beta=0.1
        let n = 8;
        let beta = 0.1;
        let (t, r_c, z) = (1.0, 1.0, 0.0);
        let scan = smooth_sensitivity(|k| g_balanced(z, Some(0), t, r_c, n, k), beta, n);
        let mut expect = f64::NEG_INFINITY;
        for k in 0..=n {
            let (g, _) = g_balanced(z, Some(0), t, r_c, n, k);
            expect = expect.max((-beta * k as f64).exp() * g);
        }
        assert_relative_eq!(scan.value, expect, max_relative = 1e-12);
    }

    #[test]
    fn scan_large_beta_takes_k0_term() {
        let n = 20;
        let scan = smooth_sensitivity(|k| g_balanced(0.1, Some(0), 1.0, 1.0, n, k), 50.0, n);
        let (g0, _) = g_balanced(0.1, Some(0), 1.0, 1.0, n, 0);
        assert_eq!(scan.value, g0);
        assert_eq!(scan.case_taken, GCase::NoOutliers);
    }

    #[test]
    fn report_value_is_max_over_profile() {
        let mut rng = ChaCha12Rng::seed_from_u64(31);
        for _ in 0..50 {
            let n = rng.gen_range(2..=10);
            let means: Vec<Vec<f64>> =
                (0..n).map(|_| vec![rng.gen_range(-2.0..2.0)]).collect();
            let beta = rng.gen_range(0.05..1.0);
            let report = balanced_report(&means, 1.0, 1.5, beta, DeltaMethod::Exact).unwrap();
            let from_profile = report
                .g_profile
                .iter()
                .map(|(k, g)| (-beta * *k as f64).exp() * g)
                .fold(f64::NEG_INFINITY, f64::max);
            assert_relative_eq!(report.smooth_sensitivity, from_profile, max_relative = 1e-12);
            assert!(report.smooth_sensitivity >= report.g_profile[0].1 * 1.0 - 1e-15);
            assert!(report.g_profile.iter().all(|(_, g)| *g > 0.0));
        }
    }

    #[test]
    fn imbalanced_report_equal_sizes_matches_balanced_case_a() {
        // concentrated equal-size instance; beta large so the k=0 term wins
        let mut rng = ChaCha12Rng::seed_from_u64(37);
        let n = 40;
        let means: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.gen_range(-0.05..0.05)]).collect();
        let t = 1.0;
        let summaries: Vec<UserSummary> = means
            .iter()
            .map(|m| UserSummary {
                mean: m.clone(),
                size: 7,
                weight: Some(1.0 / n as f64),
                threshold: Some(t),
            })
            .collect();
        let beta = 2.0;
        let bal = balanced_report(&means, t, 1.0, beta, DeltaMethod::Greedy).unwrap();
        let imb = imbalanced_report(&summaries, 5, 1.0, beta, DeltaMethod::Greedy).unwrap();
        assert_relative_eq!(bal.smooth_sensitivity, imb.smooth_sensitivity, max_relative = 1e-12);
        assert_eq!(bal.case_taken, GCase::NoOutliers);
        assert_eq!(imb.case_taken, GCase::NoOutliers);
    }

    #[test]
    fn g_case_b_is_nondecreasing_in_k() {
        for n in [8usize, 20, 101] {
            let mut last = 0.0;
            for k in 0..n {
                let (v, c) = g_balanced(10.0, Some(1), 1.0, 100.0, n, k);
                if c == GCase::FewOutliers {
                    assert!(v >= last, "G dropped from {last} to {v} at k={k}");
                    last = v;
                }
            }
        }
    }

    #[test]
    fn g_chain_bound_across_neighbors() {
        // G(D,k) <= G(D',k+1) when the outlier counts differ by at most
        // one, mirroring how the scan's smoothness is argued.
        let mut rng = ChaCha12Rng::seed_from_u64(41);
        for _ in 0..200 {
            let n = rng.gen_range(8..=16);
            let t = 1.0;
            let r_c = 1.0;
            let z: f64 = rng.gen_range(0.0..2.0);
            let z_next = (z + rng.gen_range(-0.3..0.3)).max(0.0);
            let delta = rng.gen_range(0usize..3);
            let delta_next = delta + 1;
            for k in 0..n - 1 {
                let (g_base, _) = g_balanced(z, Some(delta), t, r_c, n, k);
                let (g_next, _) = g_balanced(z_next, Some(delta_next), t, r_c, n, k + 1);
                if k > 0 || z >= (1.0 - 2.0 / n as f64) * t {
                    assert!(
                        g_base <= g_next + 1e-12,
                        "G(D,{k}) = {g_base} > G(D',{}) = {g_next}",
                        k + 1
                    );
                }
            }
        }
    }

    #[test]
    fn subset_enumeration_counts() {
        let mut count = 0usize;
        for_each_removed_subset(6, 3, &mut |s| {
            assert_eq!(s.len(), 3);
            count += 1;
        });
        assert_eq!(count, 20);
        assert_eq!(binomial(12, 6), 924);
    }
}
