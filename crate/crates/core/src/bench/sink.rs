//! Report files: canonical JSON, the cumulative results table and loss
//! curves.

use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;

use super::BenchReport;
use crate::error::{Error, Result};

pub const RESULTS_HEADER: &str = "model,dataset,gen_acc,orig_acc,iters,seed";

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(())
}

/// Pretty JSON with keys in sorted order.
pub fn write_report_json(report: &BenchReport, path: &Path) -> Result<()> {
    ensure_parent(path)?;
    let text = serde_json::to_string_pretty(&serde_json::to_value(report)?)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_report_json(path: &Path) -> Result<BenchReport> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Appends one row, writing the header first if the file is new or empty.
/// Accuracies are percentages with two decimals; `seed` is the model seed.
pub fn append_results_csv(path: &Path, report: &BenchReport) -> Result<()> {
    ensure_parent(path)?;
    let fresh = std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut out = String::new();
    if fresh {
        out.push_str(RESULTS_HEADER);
        out.push('\n');
    }
    out.push_str(&format!(
        "{},{},{:.2},{:.2},{},{}\n",
        report.model,
        report.dataset,
        report.gen_acc * 100.0,
        report.orig_acc * 100.0,
        report.iterations,
        report.seeds.model
    ));
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

/// `step,<curve>...` rows; shorter curves leave trailing cells empty.
pub fn write_curves_csv(curves: &BTreeMap<String, Vec<f64>>, path: &Path) -> Result<()> {
    ensure_parent(path)?;
    let names: Vec<&String> = curves.keys().collect();
    let len = curves.values().map(Vec::len).max().unwrap_or(0);
    let mut out = String::from("step");
    for n in &names {
        out.push(',');
        out.push_str(n);
    }
    out.push('\n');
    for step in 0..len {
        out.push_str(&step.to_string());
        for n in &names {
            out.push(',');
            if let Some(v) = curves[*n].get(step) {
                out.push_str(&v.to_string());
            }
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
