//! CSV tables and JSON logs.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::refinement::{RefinementLog, SCHEMA_VERSION};

pub const CSV_HEADER: &str = "iteration,vertices,primal,dist_hausdorff";

/// C `printf("%.*e")` formatting with `significant` digits, e.g. `1.72061e+01`.
pub fn format_scientific(value: f64, significant: usize) -> String {
    if !value.is_finite() {
        return value.to_string();
    }
    let s = format!("{:.*e}", significant.saturating_sub(1), value);
    let (mantissa, exp) = s.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    let sign = if exp < 0 { '-' } else { '+' };
    format!("{mantissa}e{sign}{:02}", exp.abs())
}

/// One CSV row per iteration; the distance column is empty without a reference.
pub fn format_table(log: &RefinementLog) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in &log.records {
        let dist = r.dist_hausdorff.map(|d| format_scientific(d, 2)).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.iteration,
            r.vertices,
            format_scientific(r.primal, 6),
            dist
        ));
    }
    out
}

pub fn log_to_json(log: &RefinementLog) -> Result<String> {
    Ok(serde_json::to_string_pretty(log)?)
}

pub fn log_from_json(text: &str) -> Result<RefinementLog> {
    let log: RefinementLog = serde_json::from_str(text)?;
    if log.schema_version != SCHEMA_VERSION {
        return Err(Error::Config(format!(
            "unsupported schema_version {} (expected {SCHEMA_VERSION})",
            log.schema_version
        )));
    }
    Ok(log)
}

/// Path of the JSON sidecar next to a CSV table.
pub fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("json")
}

/// Writes the CSV table to `csv` and the full log next to it; returns the JSON path.
pub fn emit_table(log: &RefinementLog, csv: &Path) -> Result<PathBuf> {
    fs::write(csv, format_table(log))?;
    let json = sidecar_path(csv);
    fs::write(&json, log_to_json(log)?)?;
    Ok(json)
}

pub fn read_log(path: &Path) -> Result<RefinementLog> {
    log_from_json(&fs::read_to_string(path)?)
}
