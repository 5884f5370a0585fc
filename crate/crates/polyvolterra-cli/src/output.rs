//! CSV tables and the JSON run manifest.

use crate::config::Method;
use crate::runner::{Comparison, ConvergenceStudy, MethodRun};
use crate::CliError;
use serde_json::{json, Value};
use std::path::{Path, PathBuf};

/// Full-precision scientific notation.
pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn alpha_label(alpha: &[usize]) -> String {
    let parts: Vec<String> = alpha.iter().map(|k| k.to_string()).collect();
    format!("({})", parts.join(","))
}

fn io(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

pub fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| io(path, e))?;
    w.write_record(header).map_err(|e| io(path, e))?;
    for r in rows {
        w.write_record(&r).map_err(|e| io(path, e))?;
    }
    w.flush().map_err(|e| io(path, e))
}

/// `t, alpha, value, method, M, N` for deterministic tables.
pub fn moment_rows(run: &MethodRun, m: usize, n: usize) -> Vec<Vec<String>> {
    run.rows
        .iter()
        .map(|r| vec![num(r.t), alpha_label(&r.alpha), num(r.value), r.method.name().into(), m.to_string(), n.to_string()])
        .collect()
}

pub const MOMENT_HEADER: [&str; 6] = ["t", "alpha", "value", "method", "M", "N"];
pub const RESULT_HEADER: [&str; 5] = ["t", "alpha", "estimate", "stderr", "method"];
pub const COMPARE_HEADER: [&str; 9] =
    ["t", "alpha", "method_a", "method_b", "value_a", "value_b", "difference", "tolerance", "status"];
pub const CONVERGE_HEADER: [&str; 3] = ["param", "error_vs_reference", "rate_estimate"];

pub fn result_rows(run: &MethodRun) -> Vec<Vec<String>> {
    run.rows
        .iter()
        .map(|r| vec![num(r.t), alpha_label(&r.alpha), num(r.value), num(r.stderr), r.method.name().into()])
        .collect()
}

pub fn comparison_rows(c: &[Comparison]) -> Vec<Vec<String>> {
    c.iter()
        .map(|c| {
            vec![
                num(c.t),
                alpha_label(&c.alpha),
                c.a.name().into(),
                c.b.name().into(),
                num(c.value_a),
                num(c.value_b),
                num(c.difference),
                num(c.tolerance),
                if c.pass { "PASS" } else { "FAIL" }.into(),
            ]
        })
        .collect()
}

pub fn convergence_rows(s: &ConvergenceStudy) -> Vec<Vec<String>> {
    s.rows.iter().map(|r| vec![r.param.to_string(), num(r.error), r.rate.map(num).unwrap_or_default()]).collect()
}

pub fn method_summary(run: &MethodRun, steps: usize) -> Value {
    json!({
        "method": run.method.name(),
        "status": match (&run.inapplicable, run.skipped.is_empty()) {
            (Some(_), _) => "inapplicable",
            (None, true) => "ok",
            (None, false) => "partial",
        },
        "reason": run.inapplicable,
        "skipped": run.skipped.iter().map(|(t, why)| json!({"t": t.t, "alpha": t.alpha, "reason": why})).collect::<Vec<_>>(),
        "rows": run.rows.len(),
        "seconds": run.seconds,
        "M": steps,
    })
}

/// Writes `manifest.json` into `dir`.
pub fn write_manifest(dir: &Path, body: Value) -> Result<PathBuf, CliError> {
    std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    let path = dir.join("manifest.json");
    let mut full = json!({
        "tool": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
    });
    if let (Value::Object(a), Value::Object(b)) = (&mut full, body) {
        a.extend(b);
    }
    let text = serde_json::to_string_pretty(&full).map_err(|e| io(&path, e))?;
    std::fs::write(&path, text).map_err(|e| io(&path, e))?;
    Ok(path)
}

pub fn method_file(dir: &Path, m: Method) -> PathBuf {
    dir.join(format!("{}.csv", m.name()))
}
