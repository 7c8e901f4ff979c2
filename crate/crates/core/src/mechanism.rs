//! Parameter selection and the end-to-end private estimator:
//! user means -> weighted Huber minimizer -> clip -> Gaussian noise with
//! per-coordinate scale sigma = S(D)/alpha.
//!
//! Accuracy conditions on n are evaluated and reported as warnings, not
//! errors: the privacy guarantee holds regardless, only the error bounds
//! need them.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::baseline::WmeAudit;
use crate::dataset::{imbalance_degree, user_means, UserDataset};
use crate::error::{HlmError, Result};
use crate::huber::{weiszfeld_minimize, HuberConfig, MinimizerResult};
use crate::sensitivity::{
    balanced_report, imbalanced_report, privacy_params, DeltaMethod, PrivacyParams,
    SensitivityReport,
};
use crate::vecmath;

/// Data assumption governing threshold selection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    /// Samples supported on a ball of radius `r`.
    Bounded { r: f64 },
    /// Bounded p-th moment `m_p` (p >= 2); heavier tails, no support bound.
    HeavyTail { p: f64, m_p: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Balanced,
    /// `gamma: None` derives the imbalance degree from the data.
    Imbalanced { gamma: Option<f64> },
}

/// Where the Huber thresholds come from: the analysis-derived formulas,
/// or the tuned form T_i = a / sqrt(m_i ^ m_c) used by the experiment
/// protocol (which fixes `a` before seeing any sample values).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThresholdRule {
    Analytic,
    Multiplier { a: f64 },
}

/// Lower bound on C_T in the bounded regime.
pub fn c_t_bounded_floor() -> f64 {
    16.0 * (2.0f64 / 3.0).sqrt()
}

/// Lower bound on C_T in the heavy-tail regime.
pub fn c_t_heavytail_floor(p: f64, m_p: f64) -> f64 {
    8.0 * m_p.powf(1.0 / p)
}

/// Default C_T: 10% above the applicable lower bound.
pub fn default_c_t(regime: &Regime) -> f64 {
    match regime {
        Regime::Bounded { .. } => 1.1 * c_t_bounded_floor(),
        Regime::HeavyTail { p, m_p } => 1.1 * c_t_heavytail_floor(*p, *m_p),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub privacy: PrivacyParams,
    /// Clip radius R_c; defaults to the support radius in the bounded regime.
    pub radius: f64,
    pub regime: Regime,
    pub c_t: f64,
    pub mode: Mode,
    pub threshold_rule: ThresholdRule,
    pub delta_method: DeltaMethod,
    pub seed: u64,
}

impl EstimatorConfig {
    /// Bounded-regime config with defaults: R_c = r, analytic thresholds,
    /// balanced mode, greedy outlier search.
    pub fn bounded(epsilon: f64, delta: f64, d: usize, r: f64, seed: u64) -> Result<Self> {
        let regime = Regime::Bounded { r };
        Ok(Self {
            privacy: privacy_params(epsilon, delta, d)?,
            radius: r,
            c_t: default_c_t(&regime),
            regime,
            mode: Mode::Balanced,
            threshold_rule: ThresholdRule::Analytic,
            delta_method: DeltaMethod::Greedy,
            seed,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0) || !self.radius.is_finite() {
            return Err(HlmError::Argument(format!("radius must be positive, got {}", self.radius)));
        }
        match self.regime {
            Regime::Bounded { r } => {
                if !(r > 0.0) {
                    return Err(HlmError::Argument(format!("support radius must be positive, got {r}")));
                }
                if self.c_t <= c_t_bounded_floor() {
                    return Err(HlmError::Argument(format!(
                        "c_t must exceed {} in the bounded regime, got {}",
                        c_t_bounded_floor(),
                        self.c_t
                    )));
                }
            }
            Regime::HeavyTail { p, m_p } => {
                if p < 2.0 {
                    return Err(HlmError::Argument(format!("moment order p must be >= 2, got {p}")));
                }
                if !(m_p > 0.0) {
                    return Err(HlmError::Argument(format!("moment bound must be positive, got {m_p}")));
                }
                if self.c_t <= c_t_heavytail_floor(p, m_p) {
                    return Err(HlmError::Argument(format!(
                        "c_t must exceed {} in the heavy-tail regime, got {}",
                        c_t_heavytail_floor(p, m_p),
                        self.c_t
                    )));
                }
            }
        }
        if let Mode::Imbalanced { gamma: Some(g) } = self.mode {
            if g < 1.0 {
                return Err(HlmError::Argument(format!("gamma must be >= 1, got {g}")));
            }
        }
        if let ThresholdRule::Multiplier { a } = self.threshold_rule {
            if !(a > 0.0) {
                return Err(HlmError::Argument(format!("threshold multiplier must be positive, got {a}")));
            }
        }
        Ok(())
    }
}

/// Analytic threshold for bounded balanced data:
/// T = C_T R ln(m n^3 (d+1)) / sqrt(m).
pub fn select_threshold_bounded(r: f64, m: usize, n: usize, d: usize, c_t: f64) -> f64 {
    let log_arg = m as f64 * (n as f64).powi(3) * (d as f64 + 1.0);
    c_t * r * log_arg.ln() / (m as f64).sqrt()
}

/// Analytic threshold for heavy-tail balanced data, with nu = sqrt(d)/(n eps):
/// T = C_T max{ sqrt(ln(3(d+1)/nu)/m), 2 (3m)^(1/p-1) nu^(-1/p) ln(3(d+1)/nu) }.
pub fn select_threshold_heavytail(
    m: usize,
    n: usize,
    d: usize,
    epsilon: f64,
    p: f64,
    _m_p: f64,
    c_t: f64,
) -> Result<f64> {
    let nu = (d as f64).sqrt() / (n as f64 * epsilon);
    let arg = 3.0 * (d as f64 + 1.0) / nu;
    if arg <= 1.0 {
        return Err(HlmError::Argument(format!(
            "log factor nonpositive (nu = {nu}); increase the number of users"
        )));
    }
    let log = arg.ln();
    let mf = m as f64;
    let first = (log / mf).sqrt();
    let second = 2.0 * (3.0 * mf).powf(1.0 / p - 1.0) * nu.powf(-1.0 / p) * log;
    Ok(c_t * first.max(second))
}

/// Weights, thresholds and the design cutoff for imbalanced users.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImbalancedParams {
    pub weights: Vec<f64>,
    pub thresholds: Vec<f64>,
    pub m_c: f64,
    pub k_0: usize,
}

/// Analytic selection for imbalanced users: size-capped weights
/// w_i = (m_i ^ m_c) / sum_j (m_j ^ m_c) with m_c = gamma N / n,
/// thresholds T_i = C_T sqrt(R^2 ln(N n^2 (d+1)) / (m_i ^ m_c)), and
/// k_0 = floor(n / (8 gamma)).
pub fn select_imbalanced_params(
    sizes: &[usize],
    gamma: f64,
    r: f64,
    d: usize,
    c_t: f64,
) -> Result<ImbalancedParams> {
    let (weights, m_c, k_0) = imbalanced_weights(sizes, gamma)?;
    let n = sizes.len();
    let total: usize = sizes.iter().sum();
    let log_arg = total as f64 * (n as f64).powi(2) * (d as f64 + 1.0);
    let thresholds = sizes
        .iter()
        .map(|&m| c_t * (r * r * log_arg.ln() / (m as f64).min(m_c)).sqrt())
        .collect();
    Ok(ImbalancedParams { weights, thresholds, m_c, k_0 })
}

/// Tuned variant: same capped weights, thresholds T_i = a / sqrt(m_i ^ m_c).
pub fn select_imbalanced_multiplier(sizes: &[usize], gamma: f64, a: f64) -> Result<ImbalancedParams> {
    let (weights, m_c, k_0) = imbalanced_weights(sizes, gamma)?;
    let thresholds = sizes.iter().map(|&m| a / (m as f64).min(m_c).sqrt()).collect();
    Ok(ImbalancedParams { weights, thresholds, m_c, k_0 })
}

fn imbalanced_weights(sizes: &[usize], gamma: f64) -> Result<(Vec<f64>, f64, usize)> {
    if sizes.is_empty() {
        return Err(HlmError::Argument("sizes must be nonempty".into()));
    }
    if sizes.contains(&0) {
        return Err(HlmError::Argument("all user sizes must be >= 1".into()));
    }
    if !(gamma >= 1.0) || !gamma.is_finite() {
        return Err(HlmError::Argument(format!("gamma must be >= 1, got {gamma}")));
    }
    let n = sizes.len();
    let total: usize = sizes.iter().sum();
    let m_c = gamma * total as f64 / n as f64;
    let capped: Vec<f64> = sizes.iter().map(|&m| (m as f64).min(m_c)).collect();
    let cap_sum: f64 = capped.iter().sum();
    let weights: Vec<f64> = capped.iter().map(|c| c / cap_sum).collect();
    let k_0 = (n as f64 / (8.0 * gamma)).floor() as usize;
    if k_0 == 0 {
        return Err(HlmError::Condition(format!(
            "k_0 = floor(n/(8 gamma)) is zero for n = {n}, gamma = {gamma}: too few users for this gamma"
        )));
    }
    Ok((weights, m_c, k_0))
}

/// Projects `v` onto the closed ball of radius `r_c`; the identity inside.
pub fn clip(v: &[f64], r_c: f64) -> Vec<f64> {
    debug_assert!(r_c > 0.0);
    let norm = vecmath::norm(v);
    if norm <= r_c {
        v.to_vec()
    } else {
        vecmath::scale(v, r_c / norm)
    }
}

/// Outcome of the accuracy-condition check; failure downgrades to a
/// warning carried through the result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub ok: bool,
    pub detail: String,
}

/// Evaluates the applicable lower bound on the user count:
/// bounded balanced: n > (4/beta) ln(n R_c / T);
/// heavy-tail balanced: n > 8 (1 + (1/beta) ln(n / (2T)));
/// imbalanced: n > 8 gamma (1 + (1/(2 beta)) ln(N n)).
pub fn check_conditions(
    config: &EstimatorConfig,
    n: usize,
    total_samples: usize,
    thresholds: &[f64],
    gamma: Option<f64>,
) -> ConditionReport {
    let beta = config.privacy.beta;
    let nf = n as f64;
    let (rhs, label) = match (&config.mode, &config.regime) {
        (Mode::Balanced, Regime::Bounded { .. }) => {
            let t = thresholds[0];
            ((4.0 / beta) * (nf * config.radius / t).ln(), "(4/beta) ln(n R_c / T)")
        }
        (Mode::Balanced, Regime::HeavyTail { .. }) => {
            let t = thresholds[0];
            (8.0 * (1.0 + (nf / (2.0 * t)).ln() / beta), "8 (1 + (1/beta) ln(n/(2T)))")
        }
        (Mode::Imbalanced { .. }, _) => {
            let g = gamma.unwrap_or(1.0);
            (
                8.0 * g * (1.0 + (total_samples as f64 * nf).ln() / (2.0 * beta)),
                "8 gamma (1 + (1/(2 beta)) ln(N n))",
            )
        }
    };
    let ok = nf > rhs;
    ConditionReport {
        ok,
        detail: format!("n = {n} {} {rhs:.3} = {label}", if ok { ">" } else { "<=" }),
    }
}

/// Full audit trail of one mechanism invocation. For the Huber pipeline
/// `report`/`solver` are set; for the two-stage baseline `wme_audit` is.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationResult {
    /// Unclipped minimizer (or, for the baseline, unclipped weighted mean).
    pub raw: Vec<f64>,
    pub clipped: Vec<f64>,
    /// Final private output: clipped + noise.
    pub output: Vec<f64>,
    /// Per-coordinate noise standard deviation; for the coordinate-wise
    /// baseline this is the largest across coordinates.
    pub noise_scale: f64,
    pub report: Option<SensitivityReport>,
    pub solver: Option<MinimizerResult>,
    pub conditions_ok: ConditionReport,
    pub wme_audit: Option<WmeAudit>,
}

/// Runs the private estimator end to end. Deterministic in
/// `(dataset, config)`: the same seed reproduces the output bit for bit.
pub fn estimate(ds: &UserDataset, config: &EstimatorConfig) -> Result<EstimationResult> {
    config.validate()?;
    let d = ds.dim();
    if config.privacy.dimension != d {
        return Err(HlmError::Dimension(format!(
            "privacy params are calibrated for dimension {} but the dataset has dimension {d}",
            config.privacy.dimension
        )));
    }
    let n = ds.n_users();
    let total = ds.total_samples();
    let sizes = ds.sizes();
    let mut summaries = user_means(ds);

    let mut gamma_used = None;
    let mut k_0 = 0usize;
    match &config.mode {
        Mode::Balanced => {
            let m = sizes[0];
            if sizes.iter().any(|&s| s != m) {
                return Err(HlmError::Validation(
                    "balanced mode requires equal user sizes; use the imbalanced mode".into(),
                ));
            }
            let t = match config.threshold_rule {
                ThresholdRule::Analytic => match config.regime {
                    Regime::Bounded { r } => select_threshold_bounded(r, m, n, d, config.c_t),
                    Regime::HeavyTail { p, m_p } => select_threshold_heavytail(
                        m,
                        n,
                        d,
                        config.privacy.epsilon,
                        p,
                        m_p,
                        config.c_t,
                    )?,
                },
                ThresholdRule::Multiplier { a } => a / (m as f64).sqrt(),
            };
            let w = 1.0 / n as f64;
            for s in &mut summaries {
                s.weight = Some(w);
                s.threshold = Some(t);
            }
        }
        Mode::Imbalanced { gamma } => {
            let g = match gamma {
                Some(g) => *g,
                None => imbalance_degree(&sizes)?.gamma,
            };
            gamma_used = Some(g);
            let params = match config.threshold_rule {
                ThresholdRule::Analytic => {
                    let r = match config.regime {
                        Regime::Bounded { r } => r,
                        Regime::HeavyTail { .. } => {
                            return Err(HlmError::Condition(
                                "no analytic threshold rule covers heavy-tail imbalanced data; \
                                 use an explicit threshold multiplier"
                                    .into(),
                            ))
                        }
                    };
                    select_imbalanced_params(&sizes, g, r, d, config.c_t)?
                }
                ThresholdRule::Multiplier { a } => select_imbalanced_multiplier(&sizes, g, a)?,
            };
            k_0 = params.k_0;
            for (s, (w, t)) in summaries
                .iter_mut()
                .zip(params.weights.iter().zip(&params.thresholds))
            {
                s.weight = Some(*w);
                s.threshold = Some(*t);
            }
        }
    }

    let thresholds: Vec<f64> = summaries.iter().map(|s| s.threshold.unwrap()).collect();
    let max_t = thresholds.iter().copied().fold(0.0, f64::max);
    let solver = weiszfeld_minimize(&summaries, &HuberConfig::for_max_threshold(max_t))?;
    let raw = solver.point.clone();
    let clipped = clip(&raw, config.radius);

    let report = match &config.mode {
        Mode::Balanced => {
            let means: Vec<Vec<f64>> = summaries.iter().map(|s| s.mean.clone()).collect();
            balanced_report(
                &means,
                thresholds[0],
                config.radius,
                config.privacy.beta,
                config.delta_method,
            )?
        }
        Mode::Imbalanced { .. } => imbalanced_report(
            &summaries,
            k_0,
            config.radius,
            config.privacy.beta,
            config.delta_method,
        )?,
    };

    let sigma = report.smooth_sensitivity / config.privacy.alpha;
    let mut rng = ChaCha12Rng::seed_from_u64(config.seed);
    let output: Vec<f64> = clipped
        .iter()
        .map(|c| {
            let z: f64 = rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng);
            c + sigma * z
        })
        .collect();

    let conditions_ok = check_conditions(config, n, total, &thresholds, gamma_used);
    Ok(EstimationResult {
        raw,
        clipped,
        output,
        noise_scale: sigma,
        report: Some(report),
        solver: Some(solver),
        conditions_ok,
        wme_audit: None,
    })
}

/// Flat key-value form of the estimator and baseline configuration, the
/// serialized representation accepted by the CLI and config files.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigDoc {
    pub epsilon: Option<f64>,
    pub delta: Option<f64>,
    pub radius: Option<f64>,
    /// "bounded" | "heavy-tail"
    pub regime: Option<String>,
    pub r: Option<f64>,
    pub p: Option<f64>,
    pub m_p: Option<f64>,
    pub c_t: Option<f64>,
    /// "balanced" | "imbalanced"
    pub mode: Option<String>,
    pub gamma: Option<f64>,
    pub threshold_multiplier: Option<f64>,
    /// "greedy" | "exact"
    pub delta_method: Option<String>,
    pub seed: Option<u64>,
    // two-stage baseline knobs
    pub tau: Option<f64>,
    pub stage1_fraction: Option<f64>,
    pub range_lo: Option<f64>,
    pub range_hi: Option<f64>,
}

impl ConfigDoc {
    /// Field-wise merge; values in `overlay` win.
    pub fn merged_with(mut self, overlay: &ConfigDoc) -> ConfigDoc {
        macro_rules! take {
            ($($f:ident),*) => { $( if overlay.$f.is_some() { self.$f = overlay.$f.clone(); } )* };
        }
        take!(
            epsilon, delta, radius, regime, r, p, m_p, c_t, mode, gamma, threshold_multiplier,
            delta_method, seed, tau, stage1_fraction, range_lo, range_hi
        );
        self
    }

    pub fn build_estimator(&self, d: usize) -> Result<EstimatorConfig> {
        let epsilon = self.require("epsilon", self.epsilon)?;
        let delta = self.require("delta", self.delta)?;
        let seed = self
            .seed
            .ok_or_else(|| HlmError::Argument("seed is required".into()))?;
        let regime = match self.regime.as_deref() {
            None | Some("bounded") => Regime::Bounded {
                r: self.r.or(self.radius).ok_or_else(|| {
                    HlmError::Argument("bounded regime requires r or radius".into())
                })?,
            },
            Some("heavy-tail") | Some("heavytail") => Regime::HeavyTail {
                p: self.require("p", self.p)?,
                m_p: self.require("m_p", self.m_p)?,
            },
            Some(other) => return Err(HlmError::Argument(format!("unknown regime '{other}'"))),
        };
        let radius = match (self.radius, &regime) {
            (Some(rc), _) => rc,
            (None, Regime::Bounded { r }) => *r,
            (None, Regime::HeavyTail { .. }) => {
                return Err(HlmError::Argument("heavy-tail regime requires an explicit radius".into()))
            }
        };
        let mode = match self.mode.as_deref() {
            None | Some("balanced") => Mode::Balanced,
            Some("imbalanced") => Mode::Imbalanced { gamma: self.gamma },
            Some(other) => return Err(HlmError::Argument(format!("unknown mode '{other}'"))),
        };
        let threshold_rule = match self.threshold_multiplier {
            Some(a) => ThresholdRule::Multiplier { a },
            None => ThresholdRule::Analytic,
        };
        let delta_method = match self.delta_method.as_deref() {
            None | Some("greedy") => DeltaMethod::Greedy,
            Some("exact") => DeltaMethod::Exact,
            Some(other) => return Err(HlmError::Argument(format!("unknown delta method '{other}'"))),
        };
        let config = EstimatorConfig {
            privacy: privacy_params(epsilon, delta, d)?,
            radius,
            c_t: self.c_t.unwrap_or_else(|| default_c_t(&regime)),
            regime,
            mode,
            threshold_rule,
            delta_method,
            seed,
        };
        config.validate()?;
        Ok(config)
    }

    fn require(&self, name: &str, v: Option<f64>) -> Result<f64> {
        v.ok_or_else(|| HlmError::Argument(format!("{name} is required")))
    }
}
