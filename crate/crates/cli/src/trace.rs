//! Trace persistence: one CSV row per iterate plus a JSON sidecar holding
//! the run header (config snapshot, version, seed, final point).
//!
//! Floats are written as `{:.16e}` (17 significant digits) so reading a
//! trace back reproduces every record bit for bit. Optional fields map to
//! empty cells. The iterate itself spans the `x_0..x_{n-1}` columns, and
//! `wallclock_ms` sits last so timing can be stripped when comparing the
//! deterministic part of two runs byte for byte.

use std::path::{Path, PathBuf};

use cssca_core::driver::{IterateRecord, RunTrace};
use cssca_core::subproblem::UpdateKind;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum TraceError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot write {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: malformed trace: {message}")]
    Malformed { path: PathBuf, message: String },
    #[error("{path}: malformed sidecar: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

/// Columns before the iterate block; `x_0..x_{n-1}` and `wallclock_ms` follow.
pub const LEADING_COLUMNS: [&str; 12] = [
    "t",
    "update_kind",
    "alpha",
    "f0_est",
    "max_constraint_est",
    "rho",
    "gamma",
    "step_gap",
    "subproblem_iters",
    "subproblem_residual",
    "saa_f0",
    "saa_max_constraint",
];

fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_opt_float(v: Option<f64>) -> String {
    v.map(fmt_float).unwrap_or_default()
}

fn kind_str(kind: Option<UpdateKind>) -> &'static str {
    match kind {
        Some(UpdateKind::Objective) => "objective",
        Some(UpdateKind::Feasibility) => "feasibility",
        None => "",
    }
}

pub fn write_csv(path: &Path, trace: &RunTrace) -> Result<(), TraceError> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)
                .map_err(|source| TraceError::Io { path: path.to_path_buf(), source })?;
        }
    }
    let csv_err = |source| TraceError::Csv { path: path.to_path_buf(), source };
    let dim = trace.records.first().map_or(0, |r| r.x.len());
    let mut writer = csv::Writer::from_path(path).map_err(csv_err)?;
    let mut header: Vec<String> = LEADING_COLUMNS.iter().map(|s| s.to_string()).collect();
    header.extend((0..dim).map(|j| format!("x_{j}")));
    header.push("wallclock_ms".into());
    writer.write_record(&header).map_err(csv_err)?;
    for record in &trace.records {
        let mut row: Vec<String> = vec![
            record.t.to_string(),
            kind_str(record.kind).to_string(),
            fmt_opt_float(record.alpha),
            fmt_opt_float(record.f0_est),
            fmt_opt_float(record.max_constraint_est),
            fmt_opt_float(record.rho),
            fmt_opt_float(record.gamma),
            fmt_opt_float(record.step_gap),
            record.subproblem_iters.map(|n| n.to_string()).unwrap_or_default(),
            fmt_opt_float(record.subproblem_residual),
            fmt_opt_float(record.saa_f0),
            fmt_opt_float(record.saa_max_constraint),
        ];
        row.extend(record.x.iter().map(|&v| fmt_float(v)));
        row.push(fmt_float(record.wallclock_ms));
        writer.write_record(&row).map_err(csv_err)?;
    }
    writer.flush().map_err(|source| TraceError::Io { path: path.to_path_buf(), source })?;
    Ok(())
}

pub fn read_csv(path: &Path) -> Result<Vec<IterateRecord>, TraceError> {
    let malformed = |message: String| TraceError::Malformed { path: path.to_path_buf(), message };
    let mut reader = csv::Reader::from_path(path)
        .map_err(|source| TraceError::Csv { path: path.to_path_buf(), source })?;
    let header = reader
        .headers()
        .map_err(|source| TraceError::Csv { path: path.to_path_buf(), source })?
        .clone();
    let names: Vec<&str> = header.iter().collect();
    if names.len() < LEADING_COLUMNS.len() + 1
        || names[..LEADING_COLUMNS.len()] != LEADING_COLUMNS
        || names.last() != Some(&"wallclock_ms")
    {
        return Err(malformed("unexpected column layout".into()));
    }
    let dim = names.len() - LEADING_COLUMNS.len() - 1;
    let mut records = Vec::new();
    for (line, row) in reader.records().enumerate() {
        let row = row.map_err(|source| TraceError::Csv { path: path.to_path_buf(), source })?;
        if row.len() != names.len() {
            return Err(malformed(format!(
                "row {line} has {} fields, expected {}",
                row.len(),
                names.len()
            )));
        }
        let field = |j: usize| row.get(j).unwrap_or_default();
        let opt_float = |j: usize| -> Result<Option<f64>, TraceError> {
            let s = field(j);
            if s.is_empty() {
                return Ok(None);
            }
            s.parse::<f64>()
                .map(Some)
                .map_err(|e| malformed(format!("row {line}, column {}: {e}", names[j])))
        };
        let kind = match field(1) {
            "" => None,
            "objective" => Some(UpdateKind::Objective),
            "feasibility" => Some(UpdateKind::Feasibility),
            other => return Err(malformed(format!("row {line}: unknown update kind {other:?}"))),
        };
        let mut x = Vec::with_capacity(dim);
        for j in 0..dim {
            x.push(opt_float(LEADING_COLUMNS.len() + j)?.ok_or_else(|| {
                malformed(format!("row {line}: empty iterate coordinate x_{j}"))
            })?);
        }
        records.push(IterateRecord {
            t: field(0)
                .parse()
                .map_err(|e| malformed(format!("row {line}, column t: {e}")))?,
            x,
            kind,
            rho: opt_float(5)?,
            gamma: opt_float(6)?,
            alpha: opt_float(2)?,
            f0_est: opt_float(3)?,
            max_constraint_est: opt_float(4)?,
            step_gap: opt_float(7)?,
            subproblem_iters: match field(8) {
                "" => None,
                s => Some(
                    s.parse()
                        .map_err(|e| malformed(format!("row {line}, column subproblem_iters: {e}")))?,
                ),
            },
            subproblem_residual: opt_float(9)?,
            saa_f0: opt_float(10)?,
            saa_max_constraint: opt_float(11)?,
            wallclock_ms: opt_float(names.len() - 1)?
                .ok_or_else(|| malformed(format!("row {line}: empty wallclock_ms")))?,
        });
    }
    Ok(records)
}

/// Run header written next to the CSV.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Sidecar {
    pub version: String,
    pub problem: String,
    pub dim: usize,
    pub algorithm: String,
    pub seed: u64,
    pub iterations_requested: usize,
    pub iterations_run: usize,
    pub stopped_early: bool,
    pub final_x: Vec<f64>,
    /// Verbatim contents of the config file that produced the run.
    pub config_toml: String,
}

pub fn write_sidecar(path: &Path, sidecar: &Sidecar) -> Result<(), TraceError> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)
                .map_err(|source| TraceError::Io { path: path.to_path_buf(), source })?;
        }
    }
    let mut body = serde_json::to_string_pretty(sidecar)
        .map_err(|source| TraceError::Json { path: path.to_path_buf(), source })?;
    body.push('\n');
    std::fs::write(path, body).map_err(|source| TraceError::Io { path: path.to_path_buf(), source })
}

pub fn read_sidecar(path: &Path) -> Result<Sidecar, TraceError> {
    let body = std::fs::read_to_string(path)
        .map_err(|source| TraceError::Io { path: path.to_path_buf(), source })?;
    serde_json::from_str(&body).map_err(|source| TraceError::Json { path: path.to_path_buf(), source })
}

/// The CSV bytes with the trailing `wallclock_ms` field removed from every
/// row: the part of a trace that must be identical across reruns of the
/// same config and seed.
pub fn deterministic_body(csv_text: &str) -> String {
    csv_text
        .lines()
        .map(|line| match line.rfind(',') {
            Some(pos) => &line[..pos],
            None => line,
        })
        .fold(String::new(), |mut acc, part| {
            acc.push_str(part);
            acc.push('\n');
            acc
        })
}
