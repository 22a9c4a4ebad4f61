//! The `fraclq` command line tool: spec files, reports and the four verbs
//! `solve`, `verify`, `simulate` and `bench`.
//!
//! Every invocation writes exactly one document to stdout (a JSON report, or
//! the CSV table for `bench`); diagnostics go to stderr. Exit codes: `0`
//! success, `1` I/O failure or a failed verification, `2` invalid input,
//! `3` loss of positive definiteness, `4` dynamic-programming term guard.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dpalg::{self, TermCounts, DEFAULT_MAX_TERMS};
use crate::error::Error;
use crate::model::{Policy, ProblemSpec, DEFAULT_EPSILON};
use crate::riccati;
use crate::sim::{self, CostEstimate, NoiseModel, SimOptions};
use crate::verify;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Environment variable overriding the dynamic-programming term limit.
pub const MAX_TERMS_ENV: &str = "FRACLQ_MAX_TERMS";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Model(#[from] Error),
    #[error("cannot parse {path}: {source}")]
    Parse {
        path: String,
        source: serde_json::Error,
    },
    #[error("invalid `{field}`: {reason}")]
    Input { field: String, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("verification failed: {0}")]
    Verification(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Model(Error::NotPositiveDefinite { .. }) => 3,
            CliError::Model(Error::TermGuard { .. }) => 4,
            CliError::Model(_) | CliError::Parse { .. } | CliError::Input { .. } => 2,
            CliError::Io { .. } | CliError::Verification(_) => 1,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.display().to_string(),
        source,
    }
}

// ---------------------------------------------------------------------------
// Spec files

type Rows = Vec<Vec<f64>>;

/// On-disk problem description. Matrices are row-major nested arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecFile {
    pub alpha: f64,
    pub h: f64,
    #[serde(rename = "N")]
    pub horizon: usize,
    #[serde(rename = "A")]
    pub a: Rows,
    #[serde(rename = "B")]
    pub b: Rows,
    #[serde(rename = "D")]
    pub d: Rows,
    #[serde(rename = "F")]
    pub f: Rows,
    #[serde(rename = "C")]
    pub c: Rows,
    #[serde(rename = "K")]
    pub k: Rows,
    #[serde(rename = "S")]
    pub s: Rows,
    pub x0: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    /// Published optimal costs keyed by method tag, checked by `verify`.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub reference_costs: BTreeMap<String, f64>,
}

pub fn to_rows(m: &DMatrix<f64>) -> Rows {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub fn from_rows(field: &str, rows: &Rows) -> CliResult<DMatrix<f64>> {
    let bad = |reason: String| CliError::Input {
        field: field.to_string(),
        reason,
    };
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if r == 0 || c == 0 {
        return Err(bad(
            "matrix must have at least one row and one column".into()
        ));
    }
    if let Some((i, row)) = rows.iter().enumerate().find(|(_, row)| row.len() != c) {
        return Err(bad(format!(
            "row {i} has {} entries, expected {c}",
            row.len()
        )));
    }
    Ok(DMatrix::from_row_iterator(
        r,
        c,
        rows.iter().flatten().copied(),
    ))
}

impl SpecFile {
    pub fn from_spec(spec: &ProblemSpec) -> Self {
        Self {
            alpha: spec.alpha,
            h: spec.h,
            horizon: spec.horizon,
            a: to_rows(&spec.a),
            b: to_rows(&spec.b),
            d: to_rows(&spec.d),
            f: to_rows(&spec.f),
            c: to_rows(&spec.c),
            k: to_rows(&spec.k),
            s: to_rows(&spec.s),
            x0: spec.x0.iter().copied().collect(),
            epsilon: Some(spec.epsilon),
            reference_costs: BTreeMap::new(),
        }
    }

    /// Converts and validates.
    pub fn to_spec(&self) -> CliResult<ProblemSpec> {
        let spec = ProblemSpec {
            alpha: self.alpha,
            h: self.h,
            horizon: self.horizon,
            a: from_rows("A", &self.a)?,
            b: from_rows("B", &self.b)?,
            d: from_rows("D", &self.d)?,
            f: from_rows("F", &self.f)?,
            c: from_rows("C", &self.c)?,
            k: from_rows("K", &self.k)?,
            s: from_rows("S", &self.s)?,
            x0: DVector::from_vec(self.x0.clone()),
            epsilon: self.epsilon.unwrap_or(DEFAULT_EPSILON),
        };
        spec.validate()?;
        Ok(spec)
    }
}

pub fn read_spec_file(path: &Path) -> CliResult<SpecFile> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|source| CliError::Parse {
        path: path.display().to_string(),
        source,
    })
}

/// Reads, parses and validates a spec file.
pub fn load_spec(path: &Path) -> CliResult<ProblemSpec> {
    read_spec_file(path)?.to_spec()
}

/// SHA-256 of the canonical JSON form of the problem data.
pub fn problem_hash(spec: &ProblemSpec) -> String {
    let canonical = serde_json::to_vec(&SpecFile::from_spec(spec)).expect("spec serializes");
    Sha256::digest(&canonical)
        .iter()
        .fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
}

// ---------------------------------------------------------------------------
// Reports

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Riccati,
    Dp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainEntry {
    pub n: usize,
    pub j: usize,
    #[serde(rename = "W")]
    pub w: Rows,
}

pub fn gains_to_entries(policy: &Policy) -> Vec<GainEntry> {
    (0..policy.horizon())
        .flat_map(|n| {
            policy
                .stage(n)
                .iter()
                .enumerate()
                .map(move |(j, w)| GainEntry {
                    n,
                    j,
                    w: to_rows(w),
                })
        })
        .collect()
}

pub fn entries_to_policy(
    entries: &[GainEntry],
    state_dim: usize,
    input_dim: usize,
) -> CliResult<Policy> {
    let horizon = entries.iter().map(|e| e.n + 1).max().unwrap_or(0);
    let mut policy = Policy::zeros(horizon, state_dim, input_dim);
    let mut seen = vec![Vec::new(); horizon];
    for (n, stage) in seen.iter_mut().enumerate() {
        *stage = vec![false; n + 1];
    }
    for e in entries {
        if e.j > e.n {
            return Err(CliError::Input {
                field: "gains".into(),
                reason: format!("entry (n = {}, j = {}) has j > n", e.n, e.j),
            });
        }
        let w = from_rows("gains.W", &e.w)?;
        if w.shape() != (input_dim, state_dim) {
            return Err(Error::dim(
                "gains.W",
                format!("{input_dim}x{state_dim}"),
                format!("{}x{}", w.nrows(), w.ncols()),
            )
            .into());
        }
        *policy.gain_mut(e.n, e.j) = w;
        seen[e.n][e.j] = true;
    }
    if let Some(n) = seen.iter().position(|s| s.iter().any(|x| !x)) {
        return Err(CliError::Input {
            field: "gains".into(),
            reason: format!("missing gain blocks at stage {n}"),
        });
    }
    Ok(policy)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub tool_version: String,
    pub problem_hash: String,
    pub method: Method,
    pub optimal_cost: f64,
    /// `d x d` matrix `Q` with optimal cost `x_0^T Q x_0`.
    pub cost_matrix: Rows,
    pub gains: Vec<GainEntry>,
    /// Riccati only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    /// Dynamic programming only: family sizes for stages `N-1` down to `0`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub term_counts: Option<Vec<TermCounts>>,
    /// Wall-clock seconds per phase.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timings: Option<BTreeMap<String, f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generated_at_unix: Option<u64>,
}

impl RunReport {
    pub fn policy(&self) -> CliResult<Policy> {
        let d = self.cost_matrix.len();
        let m = self.gains.first().map_or(0, |g| g.w.len());
        entries_to_policy(&self.gains, d, m)
    }
}

pub fn read_report(path: &Path) -> CliResult<RunReport> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|source| CliError::Parse {
        path: path.display().to_string(),
        source,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Delta {
    pub a: String,
    pub b: String,
    pub rel: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceCheck {
    pub method: String,
    pub reference: f64,
    pub computed: f64,
    pub rel: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub tool_version: String,
    pub problem_hash: String,
    pub epsilon: f64,
    pub tol_cross: f64,
    pub tol_reference: f64,
    /// Optimal cost from each method and oracle.
    pub costs: BTreeMap<String, f64>,
    pub deltas: Vec<Delta>,
    /// Largest relative difference between the Riccati and DP gain blocks.
    pub gain_rel_diff: f64,
    pub gains_pass: bool,
    pub reference_checks: Vec<ReferenceCheck>,
    pub pass: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timings: Option<BTreeMap<String, f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generated_at_unix: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateReport {
    pub tool_version: String,
    pub problem_hash: String,
    pub policy_source: String,
    pub estimate: CostEstimate,
    /// Exact expected cost of the same policy.
    pub exact_cost: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timings: Option<BTreeMap<String, f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generated_at_unix: Option<u64>,
}

/// Relative difference `|a - b| / max(|a|, |b|)`, zero when both vanish.
pub fn rel(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

// ---------------------------------------------------------------------------
// Commands

/// Settings shared by the verbs.
#[derive(Debug, Clone)]
pub struct Settings {
    pub epsilon: Option<f64>,
    pub max_terms: u128,
    pub stamp: bool,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            epsilon: None,
            max_terms: DEFAULT_MAX_TERMS,
            stamp: true,
        }
    }
}

impl Settings {
    fn apply(&self, spec: &ProblemSpec) -> CliResult<ProblemSpec> {
        let spec = match self.epsilon {
            Some(e) => spec.with_epsilon(e),
            None => spec.clone(),
        };
        spec.validate()?;
        Ok(spec)
    }

    fn stamp(
        &self,
        timings: BTreeMap<String, f64>,
    ) -> (Option<BTreeMap<String, f64>>, Option<u64>) {
        if !self.stamp {
            return (None, None);
        }
        let now = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_secs());
        (Some(timings), Some(now))
    }
}

fn timed<T>(timings: &mut BTreeMap<String, f64>, phase: &str, f: impl FnOnce() -> T) -> T {
    let start = Instant::now();
    let out = f();
    timings.insert(phase.to_string(), start.elapsed().as_secs_f64());
    out
}

pub fn cmd_solve(spec: &ProblemSpec, method: Method, settings: &Settings) -> CliResult<RunReport> {
    let spec = settings.apply(spec)?;
    let mut timings = BTreeMap::new();
    let (cost, matrix, policy, epsilon, counts) = match method {
        Method::Riccati => {
            let sol = timed(&mut timings, "solve", || riccati::solve(&spec))?;
            (
                sol.optimal_cost(&spec.x0),
                sol.cost_block.clone(),
                sol.to_policy(),
                Some(spec.epsilon),
                None,
            )
        }
        Method::Dp => {
            let sol = timed(&mut timings, "solve", || {
                dpalg::solve_dp_with_limit(&spec, settings.max_terms)
            })?;
            (
                sol.optimal_cost(&spec.x0),
                sol.cost_matrix.clone(),
                sol.policy,
                None,
                Some(sol.term_counts),
            )
        }
    };
    let (timings, generated_at_unix) = settings.stamp(timings);
    Ok(RunReport {
        tool_version: VERSION.to_string(),
        problem_hash: problem_hash(&spec),
        method,
        optimal_cost: cost,
        cost_matrix: to_rows(&matrix),
        gains: gains_to_entries(&policy),
        epsilon,
        term_counts: counts,
        timings,
        generated_at_unix,
    })
}

pub fn cmd_verify(
    spec: &ProblemSpec,
    references: &BTreeMap<String, f64>,
    tol_cross: f64,
    tol_reference: f64,
    settings: &Settings,
) -> CliResult<VerifyReport> {
    let spec = settings.apply(spec)?;
    let mut timings = BTreeMap::new();
    let ric = timed(&mut timings, "riccati", || riccati::solve(&spec))?;
    let dp = timed(&mut timings, "dp", || {
        dpalg::solve_dp_with_limit(&spec, settings.max_terms)
    })?;
    let tree = timed(&mut timings, "tree", || {
        verify::tree_optimal_cost(&spec, verify::DEFAULT_TREE_CAP)
    })?;
    let ric_policy = ric.to_policy();
    let moment = timed(&mut timings, "moment", || {
        verify::moment_cost(&spec, &ric_policy)
    })?;

    let mut costs = BTreeMap::new();
    costs.insert("riccati".to_string(), ric.optimal_cost(&spec.x0));
    costs.insert("dp".to_string(), dp.optimal_cost(&spec.x0));
    costs.insert("tree".to_string(), tree);
    costs.insert("moment".to_string(), moment);

    let names: Vec<&String> = costs.keys().collect();
    let mut deltas = Vec::new();
    for (i, a) in names.iter().enumerate() {
        for b in &names[i + 1..] {
            let r = rel(costs[*a], costs[*b]);
            deltas.push(Delta {
                a: a.to_string(),
                b: b.to_string(),
                rel: r,
                pass: r <= tol_cross,
            });
        }
    }
    let gain_rel_diff = ric_policy.max_rel_diff(&dp.policy).unwrap_or(f64::INFINITY);
    let gains_pass = gain_rel_diff <= tol_cross;

    let reference_checks: Vec<ReferenceCheck> = references
        .iter()
        .map(|(method, &reference)| {
            let computed = costs.get(method).copied().unwrap_or(f64::NAN);
            let r = rel(computed, reference);
            ReferenceCheck {
                method: method.clone(),
                reference,
                computed,
                rel: r,
                pass: r <= tol_reference,
            }
        })
        .collect();
    let pass =
        gains_pass && deltas.iter().all(|d| d.pass) && reference_checks.iter().all(|c| c.pass);
    let (timings, generated_at_unix) = settings.stamp(timings);
    Ok(VerifyReport {
        tool_version: VERSION.to_string(),
        problem_hash: problem_hash(&spec),
        epsilon: spec.epsilon,
        tol_cross,
        tol_reference,
        costs,
        deltas,
        gain_rel_diff,
        gains_pass,
        reference_checks,
        pass,
        timings,
        generated_at_unix,
    })
}

/// Where `simulate` takes its policy from.
#[derive(Debug, Clone)]
pub enum PolicySource {
    Solve(Method),
    Report(PathBuf),
}

pub struct SimulateRequest {
    pub source: PolicySource,
    pub noise: NoiseModel,
    pub seed: u64,
    pub paths: usize,
    pub threads: Option<usize>,
    pub keep: usize,
}

pub fn cmd_simulate(
    spec: &ProblemSpec,
    req: &SimulateRequest,
    settings: &Settings,
) -> CliResult<(SimulateReport, Vec<crate::model::Trajectory>)> {
    let spec = settings.apply(spec)?;
    let mut timings = BTreeMap::new();
    let (policy, source) = match &req.source {
        PolicySource::Solve(Method::Riccati) => (
            timed(&mut timings, "solve", || riccati::solve(&spec))?.to_policy(),
            "riccati".to_string(),
        ),
        PolicySource::Solve(Method::Dp) => (
            timed(&mut timings, "solve", || {
                dpalg::solve_dp_with_limit(&spec, settings.max_terms)
            })?
            .policy,
            "dp".to_string(),
        ),
        PolicySource::Report(path) => {
            let report = read_report(path)?;
            (report.policy()?, path.display().to_string())
        }
    };
    let options = SimOptions {
        threads: req.threads,
        keep: req.keep,
    };
    let (estimate, kept) = timed(&mut timings, "simulate", || {
        sim::simulate(&spec, &policy, req.noise, req.seed, req.paths, &options)
    })?;
    let exact_cost = verify::moment_cost(&spec, &policy)?;
    let (timings, generated_at_unix) = settings.stamp(timings);
    Ok((
        SimulateReport {
            tool_version: VERSION.to_string(),
            problem_hash: problem_hash(&spec),
            policy_source: source,
            estimate,
            exact_cost,
            timings,
            generated_at_unix,
        },
        kept,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub horizon: usize,
    pub riccati_seconds: f64,
    pub dp_seconds: f64,
    pub dp_terms_terminal: usize,
    pub dp_terms_control: usize,
    pub dp_terms_output: usize,
    pub riccati_cost: f64,
    pub dp_cost: f64,
}

pub const BENCH_HEADER: &str =
    "N,riccati_seconds,dp_seconds,dp_terms_terminal,dp_terms_control,dp_terms_output,riccati_cost,dp_cost";

impl BenchRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{:e},{:e},{},{},{},{},{}",
            self.horizon,
            self.riccati_seconds,
            self.dp_seconds,
            self.dp_terms_terminal,
            self.dp_terms_control,
            self.dp_terms_output,
            self.riccati_cost,
            self.dp_cost
        )
    }
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Times both methods on `spec` with the horizon set to each of
/// `n_min..=n_max`, reporting the median of `repeats` runs.
pub fn cmd_bench(
    spec: &ProblemSpec,
    n_min: usize,
    n_max: usize,
    repeats: usize,
    settings: &Settings,
) -> CliResult<Vec<BenchRow>> {
    if n_min == 0 || n_min > n_max {
        return Err(CliError::Input {
            field: "n-max".into(),
            reason: format!("need 1 <= n-min <= n-max, got {n_min}..{n_max}"),
        });
    }
    let repeats = repeats.max(1);
    let base = settings.apply(spec)?;
    let mut rows = Vec::new();
    for n in n_min..=n_max {
        let spec = base.with_horizon(n);
        let mut rt = Vec::with_capacity(repeats);
        let mut dt = Vec::with_capacity(repeats);
        let mut last = None;
        for _ in 0..repeats {
            let t = Instant::now();
            let ric = riccati::solve(&spec)?;
            rt.push(t.elapsed().as_secs_f64());
            let t = Instant::now();
            let dp = dpalg::solve_dp_with_limit(&spec, settings.max_terms)?;
            dt.push(t.elapsed().as_secs_f64());
            last = Some((ric, dp));
        }
        let (ric, dp) = last.expect("at least one repeat");
        let counts = *dp.term_counts.last().expect("at least one stage");
        rows.push(BenchRow {
            horizon: n,
            riccati_seconds: median(rt),
            dp_seconds: median(dt),
            dp_terms_terminal: counts.terminal,
            dp_terms_control: counts.control,
            dp_terms_output: counts.output,
            riccati_cost: ric.optimal_cost(&spec.x0),
            dp_cost: dp.optimal_cost(&spec.x0),
        });
    }
    Ok(rows)
}

pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut out = String::from(BENCH_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.to_csv());
        out.push('\n');
    }
    out
}

// ---------------------------------------------------------------------------
// Argument parsing

#[derive(Debug, Parser)]
#[command(
    name = "fraclq",
    version,
    about = "Optimal control of fractional-order linear systems with multiplicative noise"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Regularization level for the Riccati sweep (overrides the spec).
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Also write the report to this file.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Omit the timestamp and timings so reports are reproducible byte for byte.
    #[arg(long)]
    pub no_timestamp: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve a problem with one method and print the report.
    Solve {
        spec: PathBuf,
        #[arg(long, value_enum, default_value = "riccati")]
        method: Method,
        #[command(flatten)]
        common: Common,
    },
    /// Run both methods and both oracles and compare them.
    Verify {
        spec: PathBuf,
        /// Relative tolerance between methods and oracles.
        #[arg(long, default_value_t = 1e-8)]
        tol_cross: f64,
        /// Relative tolerance against the reference costs listed in the spec.
        #[arg(long = "tol-paper", default_value_t = 5e-3)]
        tol_reference: f64,
        #[command(flatten)]
        common: Common,
    },
    /// Estimate the expected cost of a policy by Monte Carlo.
    Simulate {
        spec: PathBuf,
        /// Solve for the policy with this method.
        #[arg(long, value_enum, default_value = "riccati", conflicts_with = "policy")]
        method: Method,
        /// Take the policy from a saved `solve` report instead.
        #[arg(long)]
        policy: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 10_000)]
        paths: usize,
        #[arg(long, value_enum, default_value = "normal")]
        noise: NoiseModel,
        #[arg(long)]
        threads: Option<usize>,
        /// Write sample trajectories as CSV.
        #[arg(long)]
        trajectories: Option<PathBuf>,
        /// Number of trajectories to write.
        #[arg(long, default_value_t = 10)]
        keep: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Time both methods over a range of horizons and print a CSV table.
    Bench {
        /// Base problem; the bundled reference problem when omitted.
        spec: Option<PathBuf>,
        #[arg(long, default_value_t = 4)]
        n_min: usize,
        #[arg(long, default_value_t = 12)]
        n_max: usize,
        /// Runs per horizon; the median time is reported.
        #[arg(long, default_value_t = 5)]
        repeats: usize,
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn max_terms_from_env() -> CliResult<u128> {
    match std::env::var(MAX_TERMS_ENV) {
        Ok(v) => v.trim().parse().map_err(|_| CliError::Input {
            field: MAX_TERMS_ENV.into(),
            reason: format!("expected a non-negative integer, got {v:?}"),
        }),
        Err(_) => Ok(DEFAULT_MAX_TERMS),
    }
}

fn emit(stdout: &mut dyn Write, out: Option<&Path>, text: &str) -> CliResult<()> {
    if let Some(path) = out {
        std::fs::write(path, text).map_err(io_err(path))?;
    }
    stdout
        .write_all(text.as_bytes())
        .map_err(io_err(Path::new("<stdout>")))
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("reports serialize");
    s.push('\n');
    s
}

fn execute(cli: Cli, stdout: &mut dyn Write) -> CliResult<()> {
    let max_terms = max_terms_from_env()?;
    let settings = |common: &Common| Settings {
        epsilon: common.epsilon,
        max_terms,
        stamp: !common.no_timestamp,
    };
    match cli.command {
        Command::Solve {
            spec,
            method,
            common,
        } => {
            let problem = load_spec(&spec)?;
            let report = cmd_solve(&problem, method, &settings(&common))?;
            emit(stdout, common.out.as_deref(), &to_json(&report))
        }
        Command::Verify {
            spec,
            tol_cross,
            tol_reference,
            common,
        } => {
            let file = read_spec_file(&spec)?;
            let problem = file.to_spec()?;
            let report = cmd_verify(
                &problem,
                &file.reference_costs,
                tol_cross,
                tol_reference,
                &settings(&common),
            )?;
            emit(stdout, common.out.as_deref(), &to_json(&report))?;
            if report.pass {
                Ok(())
            } else {
                Err(CliError::Verification(
                    "at least one comparison exceeded its tolerance".into(),
                ))
            }
        }
        Command::Simulate {
            spec,
            method,
            policy,
            seed,
            paths,
            noise,
            threads,
            trajectories,
            keep,
            common,
        } => {
            let problem = load_spec(&spec)?;
            let req = SimulateRequest {
                source: policy.map_or(PolicySource::Solve(method), PolicySource::Report),
                noise,
                seed,
                paths,
                threads,
                keep: if trajectories.is_some() { keep } else { 0 },
            };
            let (report, kept) = cmd_simulate(&problem, &req, &settings(&common))?;
            if let Some(path) = &trajectories {
                let file = std::fs::File::create(path).map_err(io_err(path))?;
                sim::write_trajectories_csv(std::io::BufWriter::new(file), &problem, &kept)
                    .map_err(io_err(path))?;
            }
            emit(stdout, common.out.as_deref(), &to_json(&report))
        }
        Command::Bench {
            spec,
            n_min,
            n_max,
            repeats,
            epsilon,
            out,
        } => {
            let problem = match spec {
                Some(p) => load_spec(&p)?,
                None => crate::problems::example1(),
            };
            let s = Settings {
                epsilon,
                max_terms,
                stamp: false,
            };
            let rows = cmd_bench(&problem, n_min, n_max, repeats, &s)?;
            emit(stdout, out.as_deref(), &bench_csv(&rows))
        }
    }
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = write!(stderr, "{}", e.render());
            if !e.use_stderr() {
                let _ = write!(stdout, "{}", e.render());
            }
            return code;
        }
    };
    match execute(cli, stdout) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}
