//! Learning-curve tables for plotting.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

use super::experiment::{summarize, SummaryRow};
use super::runlog::RunLog;

/// One CSV body per `(scheme, acquisition)`, keyed by file stem.
pub fn curve_tables(log: &RunLog) -> Vec<(String, String)> {
    let rows = summarize(log);
    let mut tables: Vec<(String, String)> = Vec::new();
    for row in &rows {
        let stem = curve_stem(row);
        if tables.last().is_none_or(|(s, _)| *s != stem) {
            tables.push((stem, "iteration,mean,stddev\n".to_string()));
        }
        let body = &mut tables.last_mut().expect("just pushed").1;
        body.push_str(&format!("{},{},{}\n", row.iteration, row.mean, row.stddev));
    }
    tables
}

fn curve_stem(row: &SummaryRow) -> String {
    format!("curve_{}_{}", row.scheme.as_str(), row.acquisition.as_str())
}

/// Writes `curve_<scheme>_<acquisition>.csv` files into `dir`.
pub fn emit_curves(log: &RunLog, dir: &Path) -> Result<Vec<PathBuf>> {
    if log.iterations.is_empty() {
        return Err(Error::invalid("the run log has no iteration records"));
    }
    fs::create_dir_all(dir)?;
    curve_tables(log)
        .into_iter()
        .map(|(stem, body)| {
            let path = dir.join(format!("{stem}.csv"));
            fs::write(&path, body)?;
            Ok(path)
        })
        .collect()
}
