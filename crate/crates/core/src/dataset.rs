//! User-sharded datasets: ingestion, export, per-user means, and the
//! imbalance diagnostic.
//!
//! Two file formats are supported:
//!
//! * `csv-long`: header `user_id,x_0,...,x_{d-1}`, one sample per row,
//!   rows grouped by `user_id` in first-appearance order (interleaving
//!   is allowed).
//! * `jsonl-shards`: one JSON object per user,
//!   `{"id": "...", "rows": [[...], ...]}`.
//!
//! Per-user sample counts are treated as public metadata and stored in
//! the clear in both formats.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{HlmError, Result};
use crate::vecmath;

/// One user's local samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserShard {
    pub id: String,
    pub rows: Vec<Vec<f64>>,
}

/// A dataset of `n` user shards with public sizes; immutable after
/// construction, safe to share read-only across threads.
///
/// User order is stable and index-addressable: replacement semantics
/// always compare shard `i` against shard `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct UserDataset {
    users: Vec<UserShard>,
    dim: usize,
}

impl UserDataset {
    /// Validates shard structure: at least one user, no empty shard,
    /// consistent dimension, all coordinates finite.
    pub fn new(users: Vec<UserShard>) -> Result<Self> {
        if users.is_empty() {
            return Err(HlmError::Validation("dataset contains no users".into()));
        }
        let dim = users[0]
            .rows
            .first()
            .map(|r| r.len())
            .ok_or_else(|| HlmError::Validation(format!("user '{}' has no samples", users[0].id)))?;
        if dim == 0 {
            return Err(HlmError::Dimension("samples must have at least one coordinate".into()));
        }
        for shard in &users {
            if shard.rows.is_empty() {
                return Err(HlmError::Validation(format!("user '{}' has no samples", shard.id)));
            }
            for row in &shard.rows {
                if row.len() != dim {
                    return Err(HlmError::Dimension(format!(
                        "user '{}' has a sample of dimension {} (expected {})",
                        shard.id,
                        row.len(),
                        dim
                    )));
                }
                if !vecmath::all_finite(row) {
                    return Err(HlmError::Validation(format!(
                        "user '{}' has a non-finite coordinate",
                        shard.id
                    )));
                }
            }
        }
        Ok(Self { users, dim })
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn users(&self) -> &[UserShard] {
        &self.users
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.users.iter().map(|u| u.rows.len()).collect()
    }

    /// Total sample count N = sum of m_i.
    pub fn total_samples(&self) -> usize {
        self.users.iter().map(|u| u.rows.len()).sum()
    }
}

/// Per-user summary fed to the minimizer: mean y_i and size m_i are
/// filled by [`user_means`]; weight w_i and threshold T_i stay unset
/// until a parameter-selection step provides them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserSummary {
    pub mean: Vec<f64>,
    pub size: usize,
    pub weight: Option<f64>,
    pub threshold: Option<f64>,
}

impl UserSummary {
    pub fn with_params(mut self, weight: f64, threshold: f64) -> Self {
        self.weight = Some(weight);
        self.threshold = Some(threshold);
        self
    }

    pub(crate) fn weight_or_err(&self) -> Result<f64> {
        self.weight
            .ok_or_else(|| HlmError::Argument("user weight is unset".into()))
    }

    pub(crate) fn threshold_or_err(&self) -> Result<f64> {
        match self.threshold {
            Some(t) if t > 0.0 && t.is_finite() => Ok(t),
            Some(t) => Err(HlmError::Argument(format!("threshold must be positive, got {t}"))),
            None => Err(HlmError::Argument("user threshold is unset".into())),
        }
    }
}

/// Degree-of-imbalance profile: the smallest gamma >= 1 such that users
/// with more than gamma*N/n samples hold at most half of all samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImbalanceProfile {
    pub gamma: f64,
    /// Capped size gamma*N/n.
    pub m_c: f64,
    /// 1-based cut index into the ascending-sorted sizes; `None` when no
    /// user exceeds the cap.
    pub k_c: Option<usize>,
    /// Sum of sizes at or past the cut.
    pub tail_mass: u64,
    pub valid: bool,
}

/// Computes per-user means; weights and thresholds are left unset.
pub fn user_means(ds: &UserDataset) -> Vec<UserSummary> {
    ds.users()
        .iter()
        .map(|shard| {
            let m = shard.rows.len();
            let mut mean = vec![0.0; ds.dim()];
            for row in &shard.rows {
                vecmath::axpy(&mut mean, 1.0, row);
            }
            for c in &mut mean {
                *c /= m as f64;
            }
            UserSummary {
                mean,
                size: m,
                weight: None,
                threshold: None,
            }
        })
        .collect()
}

/// Smallest gamma >= 1 satisfying the half-mass tail condition, found by
/// scanning cut positions over the ascending-sorted sizes.
///
/// Permutation-invariant (sorts internally) and invariant under scaling
/// all sizes by a common factor.
pub fn imbalance_degree(sizes: &[usize]) -> Result<ImbalanceProfile> {
    if sizes.is_empty() {
        return Err(HlmError::Argument("sizes must be nonempty".into()));
    }
    if sizes.contains(&0) {
        return Err(HlmError::Argument("all user sizes must be >= 1".into()));
    }
    let mut sorted: Vec<u64> = sizes.iter().map(|&m| m as u64).collect();
    sorted.sort_unstable();
    let n = sorted.len();
    let total: u64 = sorted.iter().sum();

    // suffix[j] = sum of sizes with 1-based index >= j; suffix[n+1] = 0.
    let mut suffix = vec![0u64; n + 2];
    for j in (1..=n).rev() {
        suffix[j] = suffix[j + 1] + sorted[j - 1];
    }

    // Scan cuts j = 2..=n+1: forcing k_c >= j needs gamma*N/n >= m_{j-1},
    // i.e. gamma >= m_{j-1}*n/N. The first cut whose tail mass is at most
    // N/2 yields the smallest feasible gamma (sizes ascending).
    let mut boundary = None;
    for j in 2..=n + 1 {
        if 2 * suffix[j] <= total {
            boundary = Some(sorted[j - 2]);
            break;
        }
    }
    let boundary = boundary.expect("a feasible cut always exists");

    // The cap is max(N/n, boundary); compare sizes against it in integer
    // arithmetic so ties at the boundary are classified exactly.
    let capped_at_average = (boundary as u128) * (n as u128) <= total as u128;
    let gamma = (boundary as f64 * n as f64 / total as f64).max(1.0);
    let m_c = gamma * total as f64 / n as f64;
    let above_cap = |m: u64| {
        if capped_at_average {
            (m as u128) * (n as u128) > total as u128
        } else {
            m > boundary
        }
    };
    let k_c = sorted.iter().position(|&m| above_cap(m)).map(|i| i + 1);
    let tail_mass = k_c.map_or(0, |j| suffix[j]);
    Ok(ImbalanceProfile {
        gamma,
        m_c,
        k_c,
        tail_mass,
        valid: 2 * tail_mass <= total,
    })
}

/// On-disk representations accepted by [`load_dataset`] / [`export_dataset`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetFormat {
    CsvLong,
    JsonlShards,
}

impl std::str::FromStr for DatasetFormat {
    type Err = HlmError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv-long" | "csv" => Ok(Self::CsvLong),
            "jsonl-shards" | "jsonl" => Ok(Self::JsonlShards),
            other => Err(HlmError::Argument(format!("unknown dataset format '{other}'"))),
        }
    }
}

pub fn load_dataset(path: &Path, format: DatasetFormat) -> Result<UserDataset> {
    match format {
        DatasetFormat::CsvLong => load_csv_long(path),
        DatasetFormat::JsonlShards => load_jsonl_shards(path),
    }
}

pub fn export_dataset(ds: &UserDataset, path: &Path, format: DatasetFormat) -> Result<()> {
    match format {
        DatasetFormat::CsvLong => export_csv_long(ds, path),
        DatasetFormat::JsonlShards => export_jsonl_shards(ds, path),
    }
}

fn load_csv_long(path: &Path) -> Result<UserDataset> {
    let file = File::open(path)?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let headers = reader
        .headers()
        .map_err(|e| HlmError::Parse { line: 1, msg: e.to_string() })?
        .clone();
    if headers.is_empty() || headers.len() < 2 {
        return Err(HlmError::Parse {
            line: 1,
            msg: "expected header user_id,x_0,...,x_{d-1}".into(),
        });
    }
    let dim = headers.len() - 1;

    let mut order: Vec<String> = Vec::new();
    let mut shards: std::collections::HashMap<String, Vec<Vec<f64>>> = std::collections::HashMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| match e.kind() {
            csv::ErrorKind::UnequalLengths { pos, .. } => HlmError::Dimension(format!(
                "row at line {} has a field count inconsistent with the header",
                pos.as_ref().map_or(0, |p| p.line())
            )),
            _ => HlmError::Parse {
                line: e.position().map_or(0, |p| p.line() as usize),
                msg: e.to_string(),
            },
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let user_id = record.get(0).unwrap_or("").to_string();
        if user_id.is_empty() {
            return Err(HlmError::Parse { line, msg: "empty user_id".into() });
        }
        let mut row = Vec::with_capacity(dim);
        for field in record.iter().skip(1) {
            let v: f64 = field.trim().parse().map_err(|_| HlmError::Parse {
                line,
                msg: format!("'{field}' is not a number"),
            })?;
            if !v.is_finite() {
                return Err(HlmError::Parse { line, msg: format!("non-finite value '{field}'") });
            }
            row.push(v);
        }
        if !shards.contains_key(&user_id) {
            order.push(user_id.clone());
        }
        shards.entry(user_id).or_default().push(row);
    }
    if order.is_empty() {
        return Err(HlmError::Parse { line: 1, msg: "file contains no data rows".into() });
    }
    let users = order
        .into_iter()
        .map(|id| {
            let rows = shards.remove(&id).unwrap();
            UserShard { id, rows }
        })
        .collect();
    UserDataset::new(users)
}

fn export_csv_long(ds: &UserDataset, path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(io_like)?;
    let mut header = vec!["user_id".to_string()];
    header.extend((0..ds.dim()).map(|j| format!("x_{j}")));
    writer.write_record(&header).map_err(io_like)?;
    for shard in ds.users() {
        for row in &shard.rows {
            let mut record = vec![shard.id.clone()];
            record.extend(row.iter().map(|v| format_f64(*v)));
            writer.write_record(&record).map_err(io_like)?;
        }
    }
    writer.flush()?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct JsonlUser {
    id: serde_json::Value,
    rows: Vec<Vec<f64>>,
}

fn load_jsonl_shards(path: &Path) -> Result<UserDataset> {
    let file = File::open(path)?;
    let reader = BufReader::new(file);
    let mut users: Vec<UserShard> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    let mut any_line = false;
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        any_line = true;
        let parsed: JsonlUser = serde_json::from_str(&line).map_err(|e| HlmError::Parse {
            line: lineno,
            msg: e.to_string(),
        })?;
        let id = match parsed.id {
            serde_json::Value::String(s) => s,
            serde_json::Value::Number(n) => n.to_string(),
            other => {
                return Err(HlmError::Parse {
                    line: lineno,
                    msg: format!("user id must be a string or number, got {other}"),
                })
            }
        };
        if !seen.insert(id.clone()) {
            return Err(HlmError::Validation(format!("duplicate user id '{id}'")));
        }
        users.push(UserShard { id, rows: parsed.rows });
    }
    if !any_line {
        return Err(HlmError::Parse { line: 1, msg: "empty file".into() });
    }
    UserDataset::new(users)
}

fn export_jsonl_shards(ds: &UserDataset, path: &Path) -> Result<()> {
    let file = File::create(path)?;
    let mut writer = BufWriter::new(file);
    for shard in ds.users() {
        let obj = JsonlUser {
            id: serde_json::Value::String(shard.id.clone()),
            rows: shard.rows.clone(),
        };
        serde_json::to_writer(&mut writer, &obj).map_err(|e| HlmError::Io(e.into()))?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

/// Shortest representation that round-trips through `f64::from_str`.
fn format_f64(v: f64) -> String {
    let mut buf = ryu_format(v);
    if !buf.contains('.') && !buf.contains('e') && !buf.contains("inf") && !buf.contains("NaN") {
        buf.push_str(".0");
    }
    buf
}

fn ryu_format(v: f64) -> String {
    // `{}` on f64 already prints the shortest round-trip form.
    format!("{v}")
}

fn io_like(e: csv::Error) -> HlmError {
    HlmError::Io(std::io::Error::other(e.to_string()))
}
