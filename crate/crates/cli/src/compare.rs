//! Side-by-side summary of finished traces: final objective, final
//! violation, and the wall-clock time each method needed to first push the
//! constraint estimate under a threshold, with differences against the
//! first trace on the command line.

use std::path::{Path, PathBuf};

use anyhow::{bail, Result};

use crate::trace::{self, Sidecar};

#[derive(Debug, Clone)]
pub struct MethodRow {
    pub label: String,
    pub algorithm: String,
    pub final_objective: Option<f64>,
    pub final_violation: Option<f64>,
    pub time_to_threshold_ms: Option<f64>,
    pub total_ms: f64,
    pub rows: usize,
}

pub fn compare(paths: &[PathBuf], threshold: f64) -> Result<String> {
    if paths.len() < 2 {
        bail!("need at least two traces to compare, got {}", paths.len());
    }
    if !threshold.is_finite() {
        bail!("threshold must be finite, got {threshold}");
    }
    let mut rows = Vec::with_capacity(paths.len());
    let mut reference: Option<(PathBuf, Sidecar)> = None;
    for path in paths {
        if !path.exists() {
            bail!("trace file not found: {}", path.display());
        }
        let records = trace::read_csv(path)?;
        let sidecar = trace::read_sidecar(&path.with_extension("json"))?;
        if records.is_empty() {
            bail!("{}: trace has no rows", path.display());
        }
        match &reference {
            None => reference = Some((path.clone(), sidecar.clone())),
            Some((first_path, first)) => {
                if first.problem != sidecar.problem || first.dim != sidecar.dim {
                    bail!(
                        "incompatible problems: {} solves {} (dim {}) but {} solves {} (dim {})",
                        first_path.display(),
                        first.problem,
                        first.dim,
                        path.display(),
                        sidecar.problem,
                        sidecar.dim
                    );
                }
            }
        }
        let last = records.last().expect("checked nonempty");
        let mut elapsed = 0.0;
        let mut time_to_threshold = None;
        for record in &records {
            elapsed += record.wallclock_ms;
            if time_to_threshold.is_none() {
                if let Some(v) = record.saa_max_constraint.or(record.max_constraint_est) {
                    if v <= threshold {
                        time_to_threshold = Some(elapsed);
                    }
                }
            }
        }
        rows.push(MethodRow {
            label: label_for(path),
            algorithm: sidecar.algorithm,
            final_objective: last.saa_f0.or(last.f0_est),
            final_violation: last.saa_max_constraint.or(last.max_constraint_est),
            time_to_threshold_ms: time_to_threshold,
            total_ms: elapsed,
            rows: records.len(),
        });
    }
    let (_, first) = reference.expect("at least two traces were read");
    Ok(render(&rows, &first, threshold))
}

fn label_for(path: &Path) -> String {
    path.file_stem().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned())
}

fn render(rows: &[MethodRow], first: &Sidecar, threshold: f64) -> String {
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.6e}")).unwrap_or_else(|| "n/a".into());
    let label_width =
        rows.iter().map(|r| r.label.len()).chain(["method".len()]).max().unwrap_or(6);
    let algo_width =
        rows.iter().map(|r| r.algorithm.len()).chain(["algorithm".len()]).max().unwrap_or(9);
    let mut out = format!(
        "{} traces, problem {} (dim {}), violation threshold {:.1e}\n\n",
        rows.len(),
        first.problem,
        first.dim,
        threshold
    );
    out.push_str(&format!(
        "{:<label_width$}  {:<algo_width$}  {:>16}  {:>16}  {:>20}  {:>12}  {:>6}\n",
        "method", "algorithm", "final_objective", "final_violation", "time_to_threshold_ms",
        "total_ms", "rows"
    ));
    for row in rows {
        out.push_str(&format!(
            "{:<label_width$}  {:<algo_width$}  {:>16}  {:>16}  {:>20}  {:>12.3e}  {:>6}\n",
            row.label,
            row.algorithm,
            opt(row.final_objective),
            opt(row.final_violation),
            opt(row.time_to_threshold_ms),
            row.total_ms,
            row.rows
        ));
    }
    let base = &rows[0];
    let delta = |a: Option<f64>, b: Option<f64>| match (a, b) {
        (Some(a), Some(b)) => format!("{:.6e}", b - a),
        _ => "n/a".into(),
    };
    out.push_str(&format!("\ndifferences vs {}\n", base.label));
    out.push_str(&format!(
        "{:<label_width$}  {:>16}  {:>16}  {:>20}\n",
        "method", "d_objective", "d_violation", "d_time_to_threshold"
    ));
    for row in &rows[1..] {
        out.push_str(&format!(
            "{:<label_width$}  {:>16}  {:>16}  {:>20}\n",
            row.label,
            delta(base.final_objective, row.final_objective),
            delta(base.final_violation, row.final_violation),
            delta(base.time_to_threshold_ms, row.time_to_threshold_ms),
        ));
    }
    out
}
