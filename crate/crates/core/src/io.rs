//! CSV and JSON artifacts.
//!
//! Numbers are written with the shortest decimal form that parses back to
//! the same `f64`, so artifacts can be re-read without loss.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lqg::GainTrajectory;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    Csv { path: String, source: csv::Error },
    #[error("{path}: {source}")]
    Json { path: String, source: serde_json::Error },
    #[error("{path}: {msg}")]
    Format { path: String, msg: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io { path: path.display().to_string(), source }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> IoError + '_ {
    move |source| IoError::Csv { path: path.display().to_string(), source }
}

/// Shortest round-trip decimal form.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

/// A numeric table with a header row.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self { header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }

    pub fn write(&self, path: &Path) -> Result<(), IoError> {
        let file = File::create(path).map_err(io_err(path))?;
        let mut w = csv::Writer::from_writer(BufWriter::new(file));
        w.write_record(&self.header).map_err(csv_err(path))?;
        let mut rec: Vec<String> = Vec::with_capacity(self.header.len());
        for row in &self.rows {
            rec.clear();
            rec.extend(row.iter().map(|v| fmt_f64(*v)));
            w.write_record(&rec).map_err(csv_err(path))?;
        }
        w.flush().map_err(io_err(path))?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, IoError> {
        let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
        let header: Vec<String> = r.headers().map_err(csv_err(path))?.iter().map(str::to_string).collect();
        let mut rows = Vec::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec.map_err(csv_err(path))?;
            let row = rec
                .iter()
                .map(|f| f.trim().parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| IoError::Format { path: path.display().to_string(), msg: format!("row {}: {e}", line + 1) })?;
            rows.push(row);
        }
        Ok(Self { header, rows })
    }
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), IoError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value)
        .map_err(|source| IoError::Json { path: path.display().to_string(), source })?;
    w.write_all(b"\n").map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|source| IoError::Json { path: path.display().to_string(), source })
}

/// Provenance written next to every set of artifacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    /// SHA-256 of the config bytes as read.
    pub config_hash: String,
    pub solver_version: String,
    pub seed: Option<u64>,
    pub artifacts: Vec<String>,
}

fn matrix_columns(prefix: &str, n: usize, out: &mut Vec<String>) {
    for i in 0..n {
        for j in 0..n {
            out.push(format!("{prefix}_{i}{j}"));
        }
    }
}

/// Gains as one row per time node: `t`, then `Ψ`, `Π`, `Λ` row-major, then `μ`.
pub fn gains_table(g: &GainTrajectory) -> Table {
    let n = g.mu.first().map_or(0, |m| m.len());
    let mut header = vec!["t".to_string()];
    matrix_columns("psi", n, &mut header);
    matrix_columns("pi", n, &mut header);
    matrix_columns("lambda", n, &mut header);
    header.extend((0..n).map(|i| format!("mu_{i}")));
    let mut rows = Vec::with_capacity(g.times.len());
    for k in 0..g.times.len() {
        let mut row = vec![g.times[k]];
        for m in [&g.psi[k], &g.pi[k], &g.lambda[k]] {
            for i in 0..n {
                for j in 0..n {
                    row.push(m[(i, j)]);
                }
            }
        }
        row.extend(g.mu[k].iter());
        rows.push(row);
    }
    Table { header, rows }
}

pub fn write_gains(path: &Path, g: &GainTrajectory) -> Result<(), IoError> {
    gains_table(g).write(path)
}

pub fn read_gains(path: &Path) -> Result<GainTrajectory, IoError> {
    let t = Table::read(path)?;
    let bad = |msg: &str| IoError::Format { path: path.display().to_string(), msg: msg.to_string() };
    let cols = t.header.len();
    // 1 + 3n² + n columns.
    let n = (1..=8).find(|n| 1 + 3 * n * n + n == cols).ok_or_else(|| bad("column count is not a gains layout"))?;
    let mut expected = Table { header: vec!["t".into()], rows: vec![] };
    matrix_columns("psi", n, &mut expected.header);
    matrix_columns("pi", n, &mut expected.header);
    matrix_columns("lambda", n, &mut expected.header);
    expected.header.extend((0..n).map(|i| format!("mu_{i}")));
    if expected.header != t.header {
        return Err(bad("unexpected gains header"));
    }
    let mut g = GainTrajectory { times: vec![], psi: vec![], pi: vec![], lambda: vec![], mu: vec![] };
    for row in &t.rows {
        if row.len() != cols {
            return Err(bad("ragged row"));
        }
        g.times.push(row[0]);
        let block = |k: usize| DMatrix::from_row_slice(n, n, &row[1 + k * n * n..1 + (k + 1) * n * n]);
        g.psi.push(block(0));
        g.pi.push(block(1));
        g.lambda.push(block(2));
        g.mu.push(DVector::from_row_slice(&row[1 + 3 * n * n..]));
    }
    if g.times.len() < 2 {
        return Err(bad("need at least two time nodes"));
    }
    Ok(g)
}
