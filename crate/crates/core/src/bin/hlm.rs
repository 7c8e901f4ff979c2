//! Command-line interface: `gen`, `estimate`, `tune`, `sweep`, `plot`.
//!
//! All parameters are flags; `estimate` also accepts a flat JSON config
//! file (`--config`), with explicit flags taking precedence. Exits
//! nonzero on any error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use hlm_core::baseline::{wme_estimate, WmeConfig};
use hlm_core::dataset::{export_dataset, load_dataset, DatasetFormat};
use hlm_core::error::{HlmError, Result};
use hlm_core::experiments::{
    emit_csv, emit_csv_path, emit_plot_path, gen_balanced, gen_imbalanced, mse_sweep, parse_csv,
    tune_hyperparameter, DistKind, DistributionSpec, ExperimentSpec, Method, SizeSpec, SweepTable,
};
use hlm_core::mechanism::{estimate, ConfigDoc};
use hlm_core::sensitivity::privacy_params;

#[derive(Parser)]
#[command(name = "hlm", version, about = "User-level DP mean estimation via Huber loss minimization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic user-sharded dataset
    Gen(GenArgs),
    /// Run the private estimator (or the two-stage baseline) on a dataset file
    Estimate(EstimateArgs),
    /// Grid-tune a hyperparameter (threshold multiplier for hlm, tau for wme)
    Tune(TuneArgs),
    /// MSE sweep over per-user sizes or imbalance degrees
    Sweep(SweepArgs),
    /// Render a sweep CSV as an SVG log-log chart
    Plot(PlotArgs),
}

#[derive(Args)]
struct DistArgs {
    /// Distribution spec: uniform:LO,HI | gaussian:MEAN,STD | lomax:SHAPE | exponential:RATE
    #[arg(long)]
    dist: String,
    /// Coordinate dimension (i.i.d. coordinates)
    #[arg(long, default_value_t = 1)]
    dim: usize,
}

impl DistArgs {
    fn parse(&self) -> Result<DistributionSpec> {
        let (name, params) = self.dist.split_once(':').unwrap_or((self.dist.as_str(), ""));
        let nums: Vec<f64> = if params.is_empty() {
            Vec::new()
        } else {
            params
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|_| HlmError::Argument(format!("bad distribution parameter '{s}'")))
                })
                .collect::<Result<_>>()?
        };
        let kind = match (name, nums.as_slice()) {
            ("uniform", [lo, hi]) => DistKind::Uniform { lo: *lo, hi: *hi },
            ("gaussian", [mean, std]) => DistKind::Gaussian { mean: *mean, std: *std },
            ("lomax", [shape]) => DistKind::Lomax { shape: *shape },
            ("exponential" | "exp", [rate]) => DistKind::Exponential { rate: *rate },
            _ => {
                return Err(HlmError::Argument(format!(
                    "cannot parse distribution '{}'; expected uniform:LO,HI | gaussian:MEAN,STD | lomax:SHAPE | exponential:RATE",
                    self.dist
                )))
            }
        };
        DistributionSpec::new(kind, self.dim)
    }
}

#[derive(Args)]
struct GenArgs {
    #[command(flatten)]
    dist: DistArgs,
    /// Number of users
    #[arg(long)]
    users: usize,
    /// Samples per user (balanced layout)
    #[arg(long, conflicts_with_all = ["total_samples", "gamma"])]
    per_user: Option<usize>,
    /// Total sample count (power-law layout, with --gamma)
    #[arg(long, requires = "gamma")]
    total_samples: Option<usize>,
    /// Imbalance degree of the power-law layout
    #[arg(long, requires = "total_samples")]
    gamma: Option<f64>,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// jsonl-shards (default) or csv-long
    #[arg(long, default_value = "jsonl-shards")]
    format: DatasetFormat,
}

#[derive(Args)]
struct EstimateArgs {
    #[arg(long)]
    input: PathBuf,
    /// jsonl-shards or csv-long; inferred from the extension when omitted
    #[arg(long)]
    format: Option<DatasetFormat>,
    /// hlm (default) or wme
    #[arg(long, default_value = "hlm")]
    method: String,
    /// Flat JSON config file; explicit flags override its entries
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    /// Clip radius R_c
    #[arg(long)]
    radius: Option<f64>,
    /// bounded (default) or heavy-tail
    #[arg(long)]
    regime: Option<String>,
    /// Support radius of the bounded regime (defaults to --radius)
    #[arg(long)]
    r: Option<f64>,
    /// Moment order of the heavy-tail regime
    #[arg(long)]
    p: Option<f64>,
    /// Moment bound of the heavy-tail regime
    #[arg(long)]
    m_p: Option<f64>,
    #[arg(long)]
    c_t: Option<f64>,
    /// balanced (default) or imbalanced
    #[arg(long)]
    mode: Option<String>,
    /// Imbalance degree; derived from the data when omitted in imbalanced mode
    #[arg(long)]
    gamma: Option<f64>,
    /// Tuned threshold rule T_i = A / sqrt(m_i ^ m_c) instead of the analytic rule
    #[arg(long)]
    threshold_multiplier: Option<f64>,
    /// greedy (default) or exact
    #[arg(long)]
    delta_method: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Stage-1 concentration radius (wme)
    #[arg(long)]
    tau: Option<f64>,
    /// Stage-1 budget fraction (wme), stage 2 gets the rest
    #[arg(long)]
    stage1_fraction: Option<f64>,
    /// Stage-1 histogram range as LO,HI (wme)
    #[arg(long, allow_hyphen_values = true)]
    range: Option<String>,
    /// Write the result JSON here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrialArgs {
    #[arg(long, default_value_t = 1.0)]
    epsilon: f64,
    #[arg(long, default_value_t = 1e-5)]
    delta: f64,
    #[arg(long, default_value_t = 1.0)]
    radius: f64,
    #[arg(long, default_value_t = 50)]
    trials: usize,
    #[arg(long)]
    seed: u64,
}

#[derive(Args)]
struct TuneArgs {
    #[command(flatten)]
    dist: DistArgs,
    #[arg(long)]
    users: usize,
    #[arg(long, conflicts_with_all = ["total_samples", "gamma"])]
    per_user: Option<usize>,
    #[arg(long, requires = "gamma")]
    total_samples: Option<usize>,
    #[arg(long, requires = "total_samples")]
    gamma: Option<f64>,
    /// hlm or wme
    #[arg(long)]
    method: String,
    /// Comma-separated candidate values
    #[arg(long)]
    grid: String,
    #[command(flatten)]
    trial: TrialArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    dist: DistArgs,
    #[arg(long)]
    users: usize,
    /// Sweep axis: m (per-user sizes) or gamma (imbalance degrees)
    #[arg(long)]
    axis: String,
    /// Comma-separated axis values
    #[arg(long)]
    values: String,
    /// Total samples per dataset (required for the gamma axis)
    #[arg(long)]
    total_samples: Option<usize>,
    /// Comma-separated methods, e.g. hlm,wme
    #[arg(long, default_value = "hlm")]
    methods: String,
    /// Tuning grid for hlm (threshold multipliers); empty = analytic rule
    #[arg(long)]
    grid_hlm: Option<String>,
    /// Tuning grid for wme (tau values); required when wme is swept
    #[arg(long)]
    grid_wme: Option<String>,
    #[command(flatten)]
    trial: TrialArgs,
    /// Write the CSV here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also render the table as an SVG chart
    #[arg(long)]
    plot: Option<PathBuf>,
}

#[derive(Args)]
struct PlotArgs {
    /// Sweep CSV produced by `hlm sweep`
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn parse_f64_list(s: &str, what: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| HlmError::Argument(format!("bad {what} value '{v}'")))
        })
        .collect()
}

fn infer_format(path: &std::path::Path, explicit: Option<DatasetFormat>) -> DatasetFormat {
    explicit.unwrap_or_else(|| match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => DatasetFormat::CsvLong,
        _ => DatasetFormat::JsonlShards,
    })
}

fn run_gen(args: GenArgs) -> Result<()> {
    let dist = args.dist.parse()?;
    let ds = match (args.per_user, args.total_samples, args.gamma) {
        (Some(m), None, None) => gen_balanced(&dist, args.users, m, args.seed)?,
        (None, Some(total), Some(gamma)) => {
            gen_imbalanced(&dist, args.users, total, gamma, args.seed)?
        }
        _ => {
            return Err(HlmError::Argument(
                "specify either --per-user or --total-samples with --gamma".into(),
            ))
        }
    };
    export_dataset(&ds, &args.out, args.format)?;
    eprintln!(
        "wrote {} users, {} samples, dimension {} to {}",
        ds.n_users(),
        ds.total_samples(),
        ds.dim(),
        args.out.display()
    );
    Ok(())
}

fn run_estimate(args: EstimateArgs) -> Result<()> {
    let format = infer_format(&args.input, args.format);
    let ds = load_dataset(&args.input, format)?;
    let d = ds.dim();

    let file_doc: ConfigDoc = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            serde_json::from_str(&text)
                .map_err(|e| HlmError::Parse { line: e.line(), msg: e.to_string() })?
        }
        None => ConfigDoc::default(),
    };
    let range = match &args.range {
        Some(s) => {
            let v = parse_f64_list(s, "range")?;
            if v.len() != 2 {
                return Err(HlmError::Argument("range must be LO,HI".into()));
            }
            (Some(v[0]), Some(v[1]))
        }
        None => (None, None),
    };
    let flag_doc = ConfigDoc {
        epsilon: args.epsilon,
        delta: args.delta,
        radius: args.radius,
        regime: args.regime.clone(),
        r: args.r,
        p: args.p,
        m_p: args.m_p,
        c_t: args.c_t,
        mode: args.mode.clone(),
        gamma: args.gamma,
        threshold_multiplier: args.threshold_multiplier,
        delta_method: args.delta_method.clone(),
        seed: args.seed,
        tau: args.tau,
        stage1_fraction: args.stage1_fraction,
        range_lo: range.0,
        range_hi: range.1,
    };
    let doc = file_doc.merged_with(&flag_doc);

    let result = match args.method.as_str() {
        "hlm" => {
            let config = doc.build_estimator(d)?;
            let res = estimate(&ds, &config)?;
            if !res.conditions_ok.ok {
                eprintln!("warning: accuracy condition not met: {}", res.conditions_ok.detail);
            }
            res
        }
        "wme" => {
            let epsilon = doc.epsilon.ok_or_else(|| HlmError::Argument("epsilon is required".into()))?;
            let delta = doc.delta.ok_or_else(|| HlmError::Argument("delta is required".into()))?;
            let seed = doc.seed.ok_or_else(|| HlmError::Argument("seed is required".into()))?;
            let tau = doc.tau.ok_or_else(|| HlmError::Argument("wme requires --tau".into()))?;
            let (lo, hi) = match (doc.range_lo, doc.range_hi) {
                (Some(lo), Some(hi)) => (lo, hi),
                _ => return Err(HlmError::Argument("wme requires --range LO,HI".into())),
            };
            let mut cfg = WmeConfig::new(privacy_params(epsilon, delta, d)?, tau, (lo, hi), seed);
            if let Some(s1) = doc.stage1_fraction {
                cfg.budget_split = (s1, 1.0 - s1);
            }
            wme_estimate(&ds, &cfg)?
        }
        other => return Err(HlmError::Argument(format!("unknown method '{other}'"))),
    };

    let json = serde_json::to_string_pretty(&result)
        .map_err(|e| HlmError::Io(std::io::Error::other(e)))?;
    match &args.out {
        Some(path) => std::fs::write(path, json)?,
        None => println!("{json}"),
    }
    Ok(())
}

fn sizes_from(
    per_user: Option<usize>,
    total_samples: Option<usize>,
    gamma: Option<f64>,
) -> Result<SizeSpec> {
    match (per_user, total_samples, gamma) {
        (Some(m), None, None) => Ok(SizeSpec::Balanced { m }),
        (None, Some(total), Some(g)) => Ok(SizeSpec::PowerLaw { total, gamma: g }),
        _ => Err(HlmError::Argument(
            "specify either --per-user or --total-samples with --gamma".into(),
        )),
    }
}

fn parse_method(s: &str) -> Result<Method> {
    match s {
        "hlm" => Ok(Method::Hlm),
        "wme" => Ok(Method::Wme),
        other => Err(HlmError::Argument(format!("unknown method '{other}'"))),
    }
}

fn run_tune(args: TuneArgs) -> Result<()> {
    let spec = ExperimentSpec {
        distribution: args.dist.parse()?,
        n: args.users,
        sizes: sizes_from(args.per_user, args.total_samples, args.gamma)?,
        method: parse_method(&args.method)?,
        trials: args.trial.trials,
        seed: args.trial.seed,
        tuning_grid: Vec::new(),
        epsilon: args.trial.epsilon,
        delta: args.trial.delta,
        radius: args.trial.radius,
    };
    let grid = parse_f64_list(&args.grid, "grid")?;
    let outcome = tune_hyperparameter(&spec, &grid)?;
    let mut text = String::from("value,mse_mean,mse_stderr,mse_median\n");
    for row in &outcome.table {
        text.push_str(&format!(
            "{},{},{},{}\n",
            row.value, row.stats.mean, row.stats.stderr, row.stats.median
        ));
    }
    text.push_str(&format!("# best = {}\n", outcome.best));
    match &args.out {
        Some(path) => std::fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn run_sweep(args: SweepArgs) -> Result<()> {
    let dist = args.dist.parse()?;
    let methods: Vec<Method> = args
        .methods
        .split(',')
        .map(|m| parse_method(m.trim()))
        .collect::<Result<_>>()?;
    let values = parse_f64_list(&args.values, "axis")?;
    let grid_hlm = match &args.grid_hlm {
        Some(s) => parse_f64_list(s, "grid-hlm")?,
        None => Vec::new(),
    };
    let grid_wme = match &args.grid_wme {
        Some(s) => parse_f64_list(s, "grid-wme")?,
        None => Vec::new(),
    };

    let mut specs = Vec::new();
    for method in &methods {
        for &value in &values {
            let sizes = match args.axis.as_str() {
                "m" => SizeSpec::Balanced { m: value as usize },
                "gamma" => SizeSpec::PowerLaw {
                    total: args.total_samples.ok_or_else(|| {
                        HlmError::Argument("the gamma axis requires --total-samples".into())
                    })?,
                    gamma: value,
                },
                other => return Err(HlmError::Argument(format!("unknown axis '{other}'"))),
            };
            specs.push(ExperimentSpec {
                distribution: dist,
                n: args.users,
                sizes,
                method: *method,
                trials: args.trial.trials,
                seed: args.trial.seed,
                tuning_grid: match method {
                    Method::Hlm => grid_hlm.clone(),
                    Method::Wme => grid_wme.clone(),
                },
                epsilon: args.trial.epsilon,
                delta: args.trial.delta,
                radius: args.trial.radius,
            });
        }
    }

    let table = mse_sweep(&specs);
    for (cell, err) in &table.failures {
        eprintln!("cell {cell} failed: {err}");
    }
    match &args.out {
        Some(path) => emit_csv_path(&table, path)?,
        None => {
            let mut buf = Vec::new();
            emit_csv(&table, &mut buf)?;
            print!("{}", String::from_utf8_lossy(&buf));
        }
    }
    if let Some(path) = &args.plot {
        emit_plot_path(&table, path)?;
    }
    if !table.failures.is_empty() {
        return Err(HlmError::Condition(format!("{} sweep cell(s) failed", table.failures.len())));
    }
    Ok(())
}

fn run_plot(args: PlotArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.input)?;
    let table: SweepTable = parse_csv(&text)?;
    emit_plot_path(&table, &args.out)?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen(args) => run_gen(args),
        Command::Estimate(args) => run_estimate(args),
        Command::Tune(args) => run_tune(args),
        Command::Sweep(args) => run_sweep(args),
        Command::Plot(args) => run_plot(args),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
