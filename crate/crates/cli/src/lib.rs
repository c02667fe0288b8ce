//! Runner behind the `carnot-potential` binary: parses a JSON config, runs
//! one experiment and writes `summary.json` plus CSV tables.

pub mod config;
pub mod experiments;

use std::fs;
use std::path::{Path, PathBuf};

use carnot_core::CarnotError;
use serde::Serialize;

pub use config::{Experiment, ExperimentConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_ACCURACY: i32 = 3;

/// Environment fallback for `--threads`.
pub const THREADS_ENV: &str = "CARNOT_POTENTIAL_THREADS";

#[derive(Clone, Debug, PartialEq)]
pub enum RunError {
    /// Bad config, bad parameters or unwritable output: exit 2.
    Validation(String),
    /// Non-convergence or a failed accuracy check: exit 3.
    Accuracy(String),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Validation(_) => EXIT_VALIDATION,
            RunError::Accuracy(_) => EXIT_ACCURACY,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            RunError::Validation(_) => "validation",
            RunError::Accuracy(_) => "accuracy",
        }
    }

    pub fn message(&self) -> &str {
        match self {
            RunError::Validation(m) | RunError::Accuracy(m) => m,
        }
    }
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} error: {}", self.kind(), self.message())
    }
}

impl std::error::Error for RunError {}

impl From<CarnotError> for RunError {
    fn from(e: CarnotError) -> Self {
        match e {
            e if e.is_accuracy() => RunError::Accuracy(e.to_string()),
            CarnotError::Precondition(_) => RunError::Accuracy(e.to_string()),
            e => RunError::Validation(e.to_string()),
        }
    }
}

impl From<std::io::Error> for RunError {
    fn from(e: std::io::Error) -> Self {
        RunError::Validation(format!("i/o: {e}"))
    }
}

impl From<csv::Error> for RunError {
    fn from(e: csv::Error) -> Self {
        RunError::Validation(format!("csv: {e}"))
    }
}

/// One pass/fail line in the summary.
#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct Check {
    pub name: String,
    pub value: f64,
    /// What `value` is compared with; see `comparison`.
    pub bound: f64,
    /// `"<="`, `">="` or `"true"`.
    pub comparison: &'static str,
    pub passed: bool,
}

impl Check {
    pub fn at_most(name: impl Into<String>, value: f64, bound: f64) -> Self {
        Check {
            name: name.into(),
            value,
            bound,
            comparison: "<=",
            passed: value <= bound,
        }
    }

    pub fn at_least(name: impl Into<String>, value: f64, bound: f64) -> Self {
        Check {
            name: name.into(),
            value,
            bound,
            comparison: ">=",
            passed: value >= bound,
        }
    }

    pub fn holds(name: impl Into<String>, ok: bool) -> Self {
        Check {
            name: name.into(),
            value: if ok { 1.0 } else { 0.0 },
            bound: 1.0,
            comparison: "true",
            passed: ok,
        }
    }
}

/// A CSV artifact.
#[derive(Clone, Debug, Default)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: &str, header: &[&str]) -> Self {
        Table {
            name: name.to_string(),
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push<I: IntoIterator<Item = String>>(&mut self, row: I) {
        self.rows.push(row.into_iter().collect());
    }

    fn write(&self, dir: &Path) -> Result<PathBuf, RunError> {
        let path = dir.join(format!("{}.csv", self.name));
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.flush()?;
        Ok(path)
    }
}

/// Shortest round-trip text for a float; `inf`/`nan` spelled out.
pub fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:?}")
    } else if v.is_nan() {
        "nan".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

/// What an experiment hands back.
#[derive(Debug, Default)]
pub struct Outcome {
    pub result: serde_json::Value,
    pub checks: Vec<Check>,
    pub tables: Vec<Table>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ErrorInfo {
    pub kind: &'static str,
    pub message: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct Summary {
    pub tool: &'static str,
    pub version: &'static str,
    pub experiment: Option<String>,
    pub group: Option<String>,
    pub rng_seed: Option<u64>,
    /// `ok`, `failed` (a check failed) or `error`.
    pub status: &'static str,
    pub exit_code: i32,
    pub passed: Option<bool>,
    pub checks: Vec<Check>,
    pub artifacts: Vec<String>,
    pub result: serde_json::Value,
    pub error: Option<ErrorInfo>,
}

impl Summary {
    fn new(config: Option<&ExperimentConfig>) -> Self {
        Summary {
            tool: "carnot-potential",
            version: env!("CARGO_PKG_VERSION"),
            experiment: config.map(|c| c.experiment.name().to_string()),
            group: config
                .and_then(|c| c.build_group().ok())
                .map(|g| g.describe()),
            rng_seed: config.and_then(|c| c.rng_seed),
            status: "error",
            exit_code: EXIT_VALIDATION,
            passed: None,
            checks: Vec::new(),
            artifacts: Vec::new(),
            result: serde_json::Value::Null,
            error: None,
        }
    }

    fn failed(mut self, e: &RunError) -> Self {
        self.status = "error";
        self.exit_code = e.exit_code();
        self.error = Some(ErrorInfo {
            kind: e.kind(),
            message: e.message().to_string(),
        });
        self
    }
}

/// `experiment  description` lines for every experiment.
pub fn list_experiments() -> String {
    Experiment::ALL
        .iter()
        .map(|e| format!("{:<18}{}\n", e.name(), e.description()))
        .collect()
}

/// Resolves the thread count: flag, then environment, then rayon's default.
pub fn thread_count(flag: Option<usize>) -> Result<Option<usize>, RunError> {
    if let Some(n) = flag {
        return if n == 0 {
            Err(RunError::Validation("--threads must be positive".into()))
        } else {
            Ok(Some(n))
        };
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(RunError::Validation(format!(
                "{THREADS_ENV} must be a positive integer, got '{v}'"
            ))),
        },
        Err(_) => Ok(None),
    }
}

/// Runs `config` in `out` on a pool of `threads` workers and writes the
/// summary (also on failure). Returns the summary; its `exit_code` is the
/// process status.
pub fn run(config: &ExperimentConfig, out: &Path, threads: Option<usize>) -> Summary {
    let summary = Summary::new(Some(config));
    let outcome = prepare_dir(out).and_then(|_| {
        let mut builder = rayon::ThreadPoolBuilder::new();
        if let Some(n) = threads {
            builder = builder.num_threads(n);
        }
        let pool = builder
            .build()
            .map_err(|e| RunError::Validation(format!("thread pool: {e}")))?;
        pool.install(|| experiments::dispatch(config))
    });
    let summary = match outcome {
        Err(e) => summary.failed(&e),
        Ok(o) => finish(summary, o, out),
    };
    write_summary(&summary, out);
    summary
}

/// The summary for a config that could not be read or parsed.
pub fn invalid_config(e: &RunError, out: &Path) -> Summary {
    let summary = Summary::new(None).failed(e);
    if prepare_dir(out).is_ok() {
        write_summary(&summary, out);
    }
    summary
}

fn finish(mut summary: Summary, o: Outcome, out: &Path) -> Summary {
    for t in &o.tables {
        match t.write(out) {
            Ok(p) => summary
                .artifacts
                .push(p.file_name().unwrap().to_string_lossy().into_owned()),
            Err(e) => return summary.failed(&e),
        }
    }
    let passed = o.checks.iter().all(|c| c.passed);
    summary.passed = Some(passed);
    summary.status = if passed { "ok" } else { "failed" };
    summary.exit_code = if passed { EXIT_OK } else { EXIT_ACCURACY };
    if !passed {
        let names: Vec<&str> = o
            .checks
            .iter()
            .filter(|c| !c.passed)
            .map(|c| c.name.as_str())
            .collect();
        summary.error = Some(ErrorInfo {
            kind: "accuracy",
            message: format!("checks failed: {}", names.join(", ")),
        });
    }
    summary.checks = o.checks;
    summary.result = o.result;
    summary
}

fn prepare_dir(out: &Path) -> Result<(), RunError> {
    fs::create_dir_all(out)
        .map_err(|e| RunError::Validation(format!("output directory {}: {e}", out.display())))
}

fn write_summary(summary: &Summary, out: &Path) {
    let text = serde_json::to_string_pretty(summary).expect("summary serializes");
    // a failure here leaves the exit code as the only report
    let _ = fs::write(out.join("summary.json"), text + "\n");
}
