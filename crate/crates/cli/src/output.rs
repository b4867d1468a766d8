//! CSV and JSON artifacts.
//!
//! Floats are written in Rust's shortest round-trip form so identical runs
//! produce identical bytes. Missing values are empty fields.

use std::fs;
use std::path::Path;

use serde::Serialize;
use smcmc::{Matrix, Vector};

use crate::error::{CliError, Result};

pub const SCHEMA_VERSION: u32 = 1;

pub fn num(x: f64) -> String {
    format!("{x}")
}

pub fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

pub fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Config(e.to_string()))?;
    text.push('\n');
    write_text(path, &text)
}

/// Write a CSV from a header and string rows.
pub fn write_csv<I>(path: &Path, header: &[String], rows: I) -> Result<()>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::csv(path, e))?;
    w.write_record(header).map_err(|e| CliError::csv(path, e))?;
    for row in rows {
        w.write_record(&row).map_err(|e| CliError::csv(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn header(first: Option<&str>, prefix: &str, dim: usize) -> Vec<String> {
    first
        .into_iter()
        .map(str::to_string)
        .chain((1..=dim).map(|i| format!("{prefix}_{i}")))
        .collect()
}

/// `(k, v_1..v_d)` rows for a time-indexed sequence starting at `first_k`.
pub fn write_series(path: &Path, prefix: &str, first_k: usize, series: &[Vector]) -> Result<()> {
    let dim = series.first().map_or(0, |v| v.len());
    let rows = series
        .iter()
        .enumerate()
        .map(|(i, v)| std::iter::once((first_k + i).to_string()).chain(v.iter().map(|x| num(*x))).collect());
    write_csv(path, &header(Some("k"), prefix, dim), rows)
}

/// Particles as rows of a `d × N` matrix.
pub fn write_particles(path: &Path, states: &Matrix) -> Result<()> {
    let rows = states.column_iter().map(|c| c.iter().map(|x| num(*x)).collect());
    write_csv(path, &header(None, "x", states.nrows()), rows)
}

/// Read `(k, y_1..y_{d_y})` rows; `k` must run `1, 2, …`.
pub fn read_observations(path: &Path, dim_y: usize) -> Result<Vec<Vector>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::csv(path, e))?;
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| CliError::csv(path, e))?;
        let bad = |what: String| CliError::Config(format!("{}: row {}: {what}", path.display(), i + 1));
        if rec.len() != dim_y + 1 {
            return Err(bad(format!("expected {} columns, got {}", dim_y + 1, rec.len())));
        }
        let k: usize = rec[0].trim().parse().map_err(|_| bad(format!("bad time index {:?}", &rec[0])))?;
        if k != i + 1 {
            return Err(bad(format!("time index {k} out of sequence")));
        }
        let y = rec
            .iter()
            .skip(1)
            .map(|f| f.trim().parse::<f64>().map_err(|_| bad(format!("bad value {f:?}"))))
            .collect::<Result<Vec<f64>>>()?;
        out.push(Vector::from_vec(y));
    }
    if out.is_empty() {
        return Err(CliError::Config(format!("{}: no observations", path.display())));
    }
    Ok(out)
}
