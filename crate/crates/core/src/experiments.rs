//! Synthetic data generation, hyperparameter tuning, MSE sweeps, and
//! table/plot emission.
//!
//! Every (cell, trial) pair owns a generator seeded by
//! `derive_seed(master, cell_id, trial)`, so sweeps are deterministic in
//! `(spec, seed)` and trials may run in parallel.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baseline::{wme_estimate, WmeConfig};
use crate::dataset::{UserDataset, UserShard};
use crate::error::{HlmError, Result};
use crate::mechanism::{default_c_t, estimate, EstimatorConfig, Mode, Regime, ThresholdRule};
use crate::sensitivity::{privacy_params, DeltaMethod};

/// Sampling law for synthetic experiments; coordinates are i.i.d. for
/// d > 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistKind {
    Uniform { lo: f64, hi: f64 },
    Gaussian { mean: f64, std: f64 },
    /// Heavy-tailed law with density a/(1+x)^(a+1) on x >= 0 and
    /// per-coordinate mean 1/(a-1); requires a > 2 for finite variance.
    Lomax { shape: f64 },
    Exponential { rate: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistributionSpec {
    pub kind: DistKind,
    pub dim: usize,
}

impl DistributionSpec {
    pub fn new(kind: DistKind, dim: usize) -> Result<Self> {
        let spec = Self { kind, dim };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(HlmError::Argument("dimension must be >= 1".into()));
        }
        match self.kind {
            DistKind::Uniform { lo, hi } => {
                if !(hi > lo) {
                    return Err(HlmError::Argument(format!("uniform needs lo < hi, got [{lo}, {hi}]")));
                }
            }
            DistKind::Gaussian { std, .. } => {
                if !(std > 0.0) {
                    return Err(HlmError::Argument(format!("gaussian std must be positive, got {std}")));
                }
            }
            DistKind::Lomax { shape } => {
                if !(shape > 2.0) {
                    return Err(HlmError::Argument(format!(
                        "lomax shape must exceed 2 for finite variance, got {shape}"
                    )));
                }
            }
            DistKind::Exponential { rate } => {
                if !(rate > 0.0) {
                    return Err(HlmError::Argument(format!("exponential rate must be positive, got {rate}")));
                }
            }
        }
        Ok(())
    }

    /// Analytic mean, replicated across coordinates.
    pub fn true_mean(&self) -> Vec<f64> {
        let per_coord = match self.kind {
            DistKind::Uniform { lo, hi } => 0.5 * (lo + hi),
            DistKind::Gaussian { mean, .. } => mean,
            DistKind::Lomax { shape } => 1.0 / (shape - 1.0),
            DistKind::Exponential { rate } => 1.0 / rate,
        };
        vec![per_coord; self.dim]
    }

    pub fn label(&self) -> String {
        match self.kind {
            DistKind::Uniform { .. } => "uniform".into(),
            DistKind::Gaussian { .. } => "gaussian".into(),
            DistKind::Lomax { .. } => "lomax".into(),
            DistKind::Exponential { .. } => "exponential".into(),
        }
    }

    fn sample(&self, rng: &mut ChaCha12Rng) -> Vec<f64> {
        (0..self.dim)
            .map(|_| match self.kind {
                DistKind::Uniform { lo, hi } => rng.gen_range(lo..hi),
                DistKind::Gaussian { mean, std } => {
                    let z: f64 =
                        rand_distr::Distribution::sample(&rand_distr::StandardNormal, rng);
                    mean + std * z
                }
                DistKind::Lomax { shape } => {
                    // inverse CDF: x = u^(-1/a) - 1 with u in (0, 1]
                    let u: f64 = 1.0 - rng.gen::<f64>();
                    u.powf(-1.0 / shape) - 1.0
                }
                DistKind::Exponential { rate } => {
                    let u: f64 = 1.0 - rng.gen::<f64>();
                    -u.ln() / rate
                }
            })
            .collect()
    }

    /// Histogram range handed to the baseline's first stage; prior
    /// knowledge of where the user means can land.
    pub fn stage1_range(&self) -> (f64, f64) {
        match self.kind {
            DistKind::Uniform { lo, hi } => (lo, hi),
            DistKind::Gaussian { mean, std } => (mean - 10.0 * std, mean + 10.0 * std),
            DistKind::Lomax { shape } => (0.0, 20.0 / (shape - 1.0)),
            DistKind::Exponential { rate } => (0.0, 20.0 / rate),
        }
    }
}

/// Per-user size layout of a synthetic dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SizeSpec {
    Balanced { m: usize },
    /// Sizes from the ceiling differences of N*(i/n)^gamma.
    PowerLaw { total: usize, gamma: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Hlm,
    Wme,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Hlm => "hlm",
            Method::Wme => "wme",
        })
    }
}

/// One sweep cell: a distribution, a size layout, a method, and the
/// tuning grid (empty grid: analytic thresholds for hlm; an error for
/// wme, whose tau has no selection rule).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub distribution: DistributionSpec,
    pub n: usize,
    pub sizes: SizeSpec,
    pub method: Method,
    pub trials: usize,
    pub seed: u64,
    pub tuning_grid: Vec<f64>,
    pub epsilon: f64,
    pub delta: f64,
    pub radius: f64,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        self.distribution.validate()?;
        if self.n == 0 {
            return Err(HlmError::Argument("n must be >= 1".into()));
        }
        if self.trials == 0 {
            return Err(HlmError::Argument("trials must be >= 1".into()));
        }
        match self.sizes {
            SizeSpec::Balanced { m } => {
                if m == 0 {
                    return Err(HlmError::Argument("per-user size must be >= 1".into()));
                }
            }
            SizeSpec::PowerLaw { total, gamma } => {
                if total < self.n {
                    return Err(HlmError::Argument(format!(
                        "total samples {total} cannot cover {} users",
                        self.n
                    )));
                }
                if !(gamma >= 1.0) {
                    return Err(HlmError::Argument(format!("gamma must be >= 1, got {gamma}")));
                }
            }
        }
        if self.method == Method::Wme && self.tuning_grid.is_empty() {
            return Err(HlmError::Argument(
                "the two-stage baseline requires a nonempty tau grid".into(),
            ));
        }
        Ok(())
    }

    fn cell_id(&self, param: Option<f64>) -> String {
        let axis = self.data_axis();
        match param {
            Some(p) => format!("{}/{}/d{}/n{}/{axis}/p{p}", self.method, self.distribution.label(), self.distribution.dim, self.n),
            None => format!("{}/{}/d{}/n{}/{axis}", self.method, self.distribution.label(), self.distribution.dim, self.n),
        }
    }

    fn data_axis(&self) -> String {
        match self.sizes {
            SizeSpec::Balanced { m } => format!("m{m}"),
            SizeSpec::PowerLaw { total, gamma } => format!("N{total}g{gamma}"),
        }
    }

    /// Identifies the datasets a cell draws: methods and tuning values
    /// share them, so comparisons are paired trial by trial.
    fn data_cell_id(&self) -> String {
        format!(
            "data/{}/d{}/n{}/{}",
            self.distribution.label(),
            self.distribution.dim,
            self.n,
            self.data_axis()
        )
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stable seed for one (cell, trial) pair: FNV-1a over the cell id mixed
/// into the master seed, then re-mixed with the trial index.
pub fn derive_seed(master: u64, cell_id: &str, trial: u64) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in cell_id.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    splitmix64(splitmix64(master ^ h) ^ trial)
}

/// n users with m i.i.d. draws each.
pub fn gen_balanced(dist: &DistributionSpec, n: usize, m: usize, seed: u64) -> Result<UserDataset> {
    dist.validate()?;
    if n == 0 || m == 0 {
        return Err(HlmError::Argument("n and m must be >= 1".into()));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let users = (0..n)
        .map(|i| UserShard {
            id: format!("u{i}"),
            rows: (0..m).map(|_| dist.sample(&mut rng)).collect(),
        })
        .collect();
    UserDataset::new(users)
}

/// Sizes from the ceiling differences s_i = ceil(N (i/n)^gamma), with a
/// repair pass for the zeros the raw formula can produce: zero sizes are
/// raised to 1 and the surplus is taken from the largest user. The
/// result is sorted ascending and always sums to N.
pub fn powerlaw_sizes(n: usize, total: usize, gamma: f64) -> Result<Vec<usize>> {
    if n == 0 {
        return Err(HlmError::Argument("n must be >= 1".into()));
    }
    if total < n {
        return Err(HlmError::Argument(format!("total {total} cannot cover {n} users")));
    }
    if !(gamma >= 1.0) || !gamma.is_finite() {
        return Err(HlmError::Argument(format!("gamma must be >= 1, got {gamma}")));
    }
    let s = |i: usize| -> u64 { (total as f64 * (i as f64 / n as f64).powf(gamma)).ceil() as u64 };
    let mut sizes: Vec<u64> = (1..=n).map(|i| s(i) - s(i - 1)).collect();
    debug_assert_eq!(sizes.iter().sum::<u64>(), total as u64);

    let zeros = sizes.iter().filter(|&&m| m == 0).count() as u64;
    if zeros > 0 {
        for m in sizes.iter_mut() {
            if *m == 0 {
                *m = 1;
            }
        }
        let (max_idx, _) = sizes
            .iter()
            .enumerate()
            .max_by_key(|&(_, &m)| m)
            .expect("nonempty");
        if sizes[max_idx] <= zeros {
            return Err(HlmError::Argument(format!(
                "gamma {gamma} too extreme for n = {n}, N = {total}: cannot repair zero sizes"
            )));
        }
        sizes[max_idx] -= zeros;
    }
    sizes.sort_unstable();
    debug_assert_eq!(sizes.iter().sum::<u64>(), total as u64);
    Ok(sizes.into_iter().map(|m| m as usize).collect())
}

/// n users whose sizes follow [`powerlaw_sizes`], each filled with i.i.d.
/// draws.
pub fn gen_imbalanced(
    dist: &DistributionSpec,
    n: usize,
    total: usize,
    gamma: f64,
    seed: u64,
) -> Result<UserDataset> {
    dist.validate()?;
    let sizes = powerlaw_sizes(n, total, gamma)?;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let users = sizes
        .iter()
        .enumerate()
        .map(|(i, &m)| UserShard {
            id: format!("u{i}"),
            rows: (0..m).map(|_| dist.sample(&mut rng)).collect(),
        })
        .collect();
    UserDataset::new(users)
}

fn squared_error(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Runs one seeded trial of the spec's method with the given tuning
/// value (threshold multiplier for hlm, tau for wme) and returns the
/// squared error against the analytic mean. The data seed ignores the
/// method and the tuning value, so methods and grid candidates are
/// compared on paired datasets.
fn run_trial(spec: &ExperimentSpec, param: Option<f64>, trial: u64) -> Result<f64> {
    let cell = spec.cell_id(param);
    let data_seed = derive_seed(spec.seed, &spec.data_cell_id(), trial);
    let mech_seed = derive_seed(spec.seed, &format!("{cell}:mech"), trial);
    let ds = match spec.sizes {
        SizeSpec::Balanced { m } => gen_balanced(&spec.distribution, spec.n, m, data_seed)?,
        SizeSpec::PowerLaw { total, gamma } => {
            gen_imbalanced(&spec.distribution, spec.n, total, gamma, data_seed)?
        }
    };
    let d = spec.distribution.dim;
    let privacy = privacy_params(spec.epsilon, spec.delta, d)?;
    let output = match spec.method {
        Method::Hlm => {
            let regime = Regime::Bounded { r: spec.radius };
            let config = EstimatorConfig {
                privacy,
                radius: spec.radius,
                c_t: default_c_t(&regime),
                regime,
                mode: match spec.sizes {
                    SizeSpec::Balanced { .. } => Mode::Balanced,
                    SizeSpec::PowerLaw { .. } => Mode::Imbalanced { gamma: None },
                },
                threshold_rule: match param {
                    Some(a) => ThresholdRule::Multiplier { a },
                    None => ThresholdRule::Analytic,
                },
                delta_method: DeltaMethod::Greedy,
                seed: mech_seed,
            };
            estimate(&ds, &config)?.output
        }
        Method::Wme => {
            let tau = param.ok_or_else(|| {
                HlmError::Argument("the two-stage baseline requires a tau value".into())
            })?;
            let cfg = WmeConfig::new(privacy, tau, spec.distribution.stage1_range(), mech_seed);
            wme_estimate(&ds, &cfg)?.output
        }
    };
    Ok(squared_error(&output, &spec.distribution.true_mean()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialStats {
    pub mean: f64,
    pub stderr: f64,
    pub median: f64,
}

fn trial_stats(mut errors: Vec<f64>) -> TrialStats {
    let n = errors.len() as f64;
    let mean = errors.iter().sum::<f64>() / n;
    let var = if errors.len() > 1 {
        errors.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    errors.sort_by(f64::total_cmp);
    let median = if errors.len() % 2 == 1 {
        errors[errors.len() / 2]
    } else {
        0.5 * (errors[errors.len() / 2 - 1] + errors[errors.len() / 2])
    };
    TrialStats { mean, stderr: (var / n).sqrt(), median }
}

fn measure(spec: &ExperimentSpec, param: Option<f64>) -> Result<TrialStats> {
    let errors: Result<Vec<f64>> = (0..spec.trials as u64)
        .into_par_iter()
        .map(|t| run_trial(spec, param, t))
        .collect();
    Ok(trial_stats(errors?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneRow {
    pub value: f64,
    pub stats: TrialStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneOutcome {
    pub best: f64,
    pub table: Vec<TuneRow>,
}

/// Evaluates every grid value over `spec.trials` seeded trials and
/// returns the argmin of the mean MSE (ties break toward the smaller
/// value) together with the full table.
pub fn tune_hyperparameter(spec: &ExperimentSpec, grid: &[f64]) -> Result<TuneOutcome> {
    if grid.is_empty() {
        return Err(HlmError::Argument("tuning grid must be nonempty".into()));
    }
    let mut values: Vec<f64> = grid.to_vec();
    values.sort_by(f64::total_cmp);
    let mut table = Vec::with_capacity(values.len());
    let mut best = values[0];
    let mut best_mse = f64::INFINITY;
    for &value in &values {
        let stats = measure(spec, Some(value))?;
        if stats.mean < best_mse {
            best_mse = stats.mean;
            best = value;
        }
        table.push(TuneRow { value, stats });
    }
    Ok(TuneOutcome { best, table })
}

/// Sweep-axis value: a per-user size or an imbalance degree.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AxisValue {
    Size(usize),
    Gamma(f64),
}

impl std::fmt::Display for AxisValue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AxisValue::Size(m) => write!(f, "{m}"),
            AxisValue::Gamma(g) => write!(f, "{g}"),
        }
    }
}

impl AxisValue {
    pub fn as_f64(&self) -> f64 {
        match self {
            AxisValue::Size(m) => *m as f64,
            AxisValue::Gamma(g) => *g,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub method: Method,
    pub dist: String,
    pub d: usize,
    pub n: usize,
    pub m_or_gamma: AxisValue,
    pub trials: usize,
    pub mse_mean: f64,
    pub mse_stderr: f64,
    pub mse_median: f64,
    pub tuned_param: Option<f64>,
}

/// A sweep's successful rows plus any cells that failed (label, error).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    pub failures: Vec<(String, String)>,
}

/// Runs each spec as one cell: tunes when the grid is nonempty, then
/// reports the winner's statistics. Failed cells are recorded and the
/// sweep continues.
pub fn mse_sweep(specs: &[ExperimentSpec]) -> SweepTable {
    let mut table = SweepTable::default();
    for spec in specs {
        match sweep_cell(spec) {
            Ok(row) => table.rows.push(row),
            Err(e) => table.failures.push((spec.cell_id(None), e.to_string())),
        }
    }
    table
}

fn sweep_cell(spec: &ExperimentSpec) -> Result<SweepRow> {
    spec.validate()?;
    let (stats, tuned) = if spec.tuning_grid.is_empty() {
        (measure(spec, None)?, None)
    } else {
        let outcome = tune_hyperparameter(spec, &spec.tuning_grid)?;
        let winner = outcome
            .table
            .iter()
            .find(|r| r.value == outcome.best)
            .expect("winner present");
        (winner.stats.clone(), Some(outcome.best))
    };
    Ok(SweepRow {
        method: spec.method,
        dist: spec.distribution.label(),
        d: spec.distribution.dim,
        n: spec.n,
        m_or_gamma: match spec.sizes {
            SizeSpec::Balanced { m } => AxisValue::Size(m),
            SizeSpec::PowerLaw { gamma, .. } => AxisValue::Gamma(gamma),
        },
        trials: spec.trials,
        mse_mean: stats.mean,
        mse_stderr: stats.stderr,
        mse_median: stats.median,
        tuned_param: tuned,
    })
}

pub const CSV_HEADER: &str = "method,dist,d,n,m_or_gamma,trials,mse_mean,mse_stderr,tuned_param";

/// Writes the fixed-schema CSV; an empty table yields a header-only file.
pub fn emit_csv<W: Write>(table: &SweepTable, mut out: W) -> Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for row in &table.rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            row.method,
            row.dist,
            row.d,
            row.n,
            row.m_or_gamma,
            row.trials,
            row.mse_mean,
            row.mse_stderr,
            row.tuned_param.map(|p| p.to_string()).unwrap_or_default()
        )?;
    }
    Ok(())
}

pub fn emit_csv_path(table: &SweepTable, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    emit_csv(table, std::io::BufWriter::new(file))
}

/// Parses a CSV produced by [`emit_csv`] (the median column is not part
/// of the schema and is restored as the mean).
pub fn parse_csv(content: &str) -> Result<SweepTable> {
    let mut lines = content.lines();
    let header = lines.next().ok_or(HlmError::Parse { line: 1, msg: "empty file".into() })?;
    if header.trim() != CSV_HEADER {
        return Err(HlmError::Parse { line: 1, msg: format!("expected header '{CSV_HEADER}'") });
    }
    let mut table = SweepTable::default();
    for (idx, line) in lines.enumerate() {
        let lineno = idx + 2;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 9 {
            return Err(HlmError::Parse { line: lineno, msg: format!("expected 9 fields, got {}", fields.len()) });
        }
        let parse_f = |s: &str, what: &str| -> Result<f64> {
            s.parse().map_err(|_| HlmError::Parse { line: lineno, msg: format!("bad {what} '{s}'") })
        };
        let method = match fields[0] {
            "hlm" => Method::Hlm,
            "wme" => Method::Wme,
            other => return Err(HlmError::Parse { line: lineno, msg: format!("unknown method '{other}'") }),
        };
        let axis_raw = parse_f(fields[4], "m_or_gamma")?;
        let m_or_gamma = if axis_raw.fract() == 0.0 && !fields[4].contains('.') {
            AxisValue::Size(axis_raw as usize)
        } else {
            AxisValue::Gamma(axis_raw)
        };
        let mse_mean = parse_f(fields[6], "mse_mean")?;
        table.rows.push(SweepRow {
            method,
            dist: fields[1].to_string(),
            d: fields[2].parse().map_err(|_| HlmError::Parse { line: lineno, msg: "bad d".into() })?,
            n: fields[3].parse().map_err(|_| HlmError::Parse { line: lineno, msg: "bad n".into() })?,
            m_or_gamma,
            trials: fields[5].parse().map_err(|_| HlmError::Parse { line: lineno, msg: "bad trials".into() })?,
            mse_mean,
            mse_stderr: parse_f(fields[7], "mse_stderr")?,
            mse_median: mse_mean,
            tuned_param: if fields[8].is_empty() { None } else { Some(parse_f(fields[8], "tuned_param")?) },
        });
    }
    Ok(table)
}

/// Renders the table as a self-contained SVG line chart with log-scaled
/// axes, one series per (method, dist, d, n) group.
pub fn emit_plot_path(table: &SweepTable, path: &Path) -> Result<()> {
    let svg = render_svg(table);
    std::fs::write(path, svg)?;
    Ok(())
}

fn render_svg(table: &SweepTable) -> String {
    const W: f64 = 800.0;
    const H: f64 = 600.0;
    const ML: f64 = 70.0;
    const MR: f64 = 180.0;
    const MT: f64 = 30.0;
    const MB: f64 = 60.0;
    const COLORS: [&str; 8] = [
        "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f",
    ];

    let mut groups: Vec<(String, Vec<(f64, f64)>)> = Vec::new();
    for row in &table.rows {
        let key = format!("{} {} d={} n={}", row.method, row.dist, row.d, row.n);
        let pt = (row.m_or_gamma.as_f64(), row.mse_mean);
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, pts)) => pts.push(pt),
            None => groups.push((key, vec![pt])),
        }
    }
    for (_, pts) in &mut groups {
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    }

    let finite_positive = |v: f64| v.is_finite() && v > 0.0;
    let xs: Vec<f64> = groups.iter().flat_map(|(_, p)| p.iter().map(|q| q.0)).filter(|v| finite_positive(*v)).collect();
    let ys: Vec<f64> = groups.iter().flat_map(|(_, p)| p.iter().map(|q| q.1)).filter(|v| finite_positive(*v)).collect();
    let (x_lo, x_hi) = log_bounds(&xs);
    let (y_lo, y_hi) = log_bounds(&ys);
    let sx = |x: f64| ML + (x.log10() - x_lo) / (x_hi - x_lo) * (W - ML - MR);
    let sy = |y: f64| H - MB - (y.log10() - y_lo) / (y_hi - y_lo) * (H - MT - MB);

    let mut svg = String::new();
    svg.push_str(&format!(
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    svg.push_str(&format!(
        "<rect x=\"{ML}\" y=\"{MT}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"black\"/>\n",
        W - ML - MR,
        H - MT - MB
    ));

    // decade gridlines and tick labels
    for exp in (x_lo.floor() as i64)..=(x_hi.ceil() as i64) {
        let x = 10f64.powi(exp as i32);
        if x.log10() < x_lo - 1e-9 || x.log10() > x_hi + 1e-9 {
            continue;
        }
        let px = sx(x);
        svg.push_str(&format!(
            "<line x1=\"{px:.2}\" y1=\"{MT}\" x2=\"{px:.2}\" y2=\"{}\" stroke=\"#dddddd\"/>\n",
            H - MB
        ));
        svg.push_str(&format!(
            "<text x=\"{px:.2}\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\">1e{exp}</text>\n",
            H - MB + 18.0
        ));
    }
    for exp in (y_lo.floor() as i64)..=(y_hi.ceil() as i64) {
        let y = 10f64.powi(exp as i32);
        if y.log10() < y_lo - 1e-9 || y.log10() > y_hi + 1e-9 {
            continue;
        }
        let py = sy(y);
        svg.push_str(&format!(
            "<line x1=\"{ML}\" y1=\"{py:.2}\" x2=\"{}\" y2=\"{py:.2}\" stroke=\"#dddddd\"/>\n",
            W - MR
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{:.2}\" font-size=\"12\" text-anchor=\"end\">1e{exp}</text>\n",
            ML - 6.0,
            py + 4.0
        ));
    }

    for (gi, (key, pts)) in groups.iter().enumerate() {
        let color = COLORS[gi % COLORS.len()];
        let path: Vec<String> = pts
            .iter()
            .filter(|(x, y)| finite_positive(*x) && finite_positive(*y))
            .map(|(x, y)| format!("{:.2},{:.2}", sx(*x), sy(*y)))
            .collect();
        if !path.is_empty() {
            svg.push_str(&format!(
                "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"2\" points=\"{}\"/>\n",
                path.join(" ")
            ));
            for p in &path {
                let (px, py) = p.split_once(',').unwrap();
                svg.push_str(&format!("<circle cx=\"{px}\" cy=\"{py}\" r=\"3\" fill=\"{color}\"/>\n"));
            }
        }
        let ly = MT + 16.0 + 18.0 * gi as f64;
        svg.push_str(&format!(
            "<rect x=\"{}\" y=\"{:.2}\" width=\"12\" height=\"12\" fill=\"{color}\"/>\n",
            W - MR + 10.0,
            ly - 10.0
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{ly:.2}\" font-size=\"12\">{}</text>\n",
            W - MR + 28.0,
            escape_xml(key)
        ));
    }

    svg.push_str(&format!(
        "<text x=\"{:.2}\" y=\"{}\" font-size=\"14\" text-anchor=\"middle\">m or gamma</text>\n",
        ML + (W - ML - MR) / 2.0,
        H - 16.0
    ));
    svg.push_str(&format!(
        "<text x=\"18\" y=\"{:.2}\" font-size=\"14\" text-anchor=\"middle\" transform=\"rotate(-90 18 {:.2})\">MSE</text>\n",
        MT + (H - MT - MB) / 2.0,
        MT + (H - MT - MB) / 2.0
    ));
    svg.push_str("</svg>\n");
    svg
}

fn log_bounds(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 1.0);
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min).log10();
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max).log10();
    if (hi - lo).abs() < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        let pad = 0.05 * (hi - lo);
        (lo - pad, hi + pad)
    }
}

fn escape_xml(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
