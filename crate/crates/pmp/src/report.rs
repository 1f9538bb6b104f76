//! CSV outputs. Every file starts with a header row and each row carries
//! a `schema` column holding the format version.

use std::fs::File;
use std::path::Path;

use pmp_core::train::EpochMetrics;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{FormatError, Result};

pub const CSV_SCHEMA_VERSION: u32 = 1;

/// `target_kind` used for magnitude-pruning baseline rows.
pub const MP_KIND: &str = "mp";

/// One (rate, target, seed) result.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportRow {
    pub schema: u32,
    pub fixed_pr: f64,
    pub observed_pr: f64,
    /// `|observed_pr − fixed_pr|`.
    pub gap: f64,
    pub target_kind: String,
    pub accuracy: f64,
    pub seed: u64,
    /// Seconds; zero when wall-time recording is off.
    pub wall_time: f64,
}

impl ReportRow {
    pub fn new(fixed_pr: f64, observed_pr: f64, target_kind: &str, accuracy: f64, seed: u64, wall_time: f64) -> Self {
        Self {
            schema: CSV_SCHEMA_VERSION,
            fixed_pr,
            observed_pr,
            gap: (observed_pr - fixed_pr).abs(),
            target_kind: target_kind.into(),
            accuracy,
            seed,
            wall_time,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsRow {
    pub schema: u32,
    pub epoch: usize,
    pub loss: f64,
    pub ce: f64,
    pub kld: f64,
    pub observed_pr: f64,
    pub lr: f64,
    pub test_acc: Option<f64>,
}

impl From<&EpochMetrics> for MetricsRow {
    fn from(m: &EpochMetrics) -> Self {
        Self {
            schema: CSV_SCHEMA_VERSION,
            epoch: m.epoch,
            loss: m.loss,
            ce: m.ce,
            kld: m.kld,
            observed_pr: m.observed_pr,
            lr: m.lr,
            test_acc: m.test_acc,
        }
    }
}

/// A sweep row that could not be produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FailureRow {
    pub schema: u32,
    pub fixed_pr: f64,
    pub target_kind: String,
    pub seed: u64,
    pub error: String,
}

/// Mean over seeds for one (rate, target) cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SummaryRow {
    pub schema: u32,
    pub fixed_pr: f64,
    pub target_kind: String,
    pub runs: usize,
    pub observed_pr: f64,
    pub gap: f64,
    pub accuracy: f64,
}

/// Averages rows sharing `(fixed_pr, target_kind)`, in first-seen order.
pub fn summarize(rows: &[ReportRow]) -> Vec<SummaryRow> {
    let mut cells: Vec<(f64, &str, Vec<&ReportRow>)> = Vec::new();
    for r in rows {
        match cells.iter_mut().find(|(p, k, _)| *p == r.fixed_pr && *k == r.target_kind) {
            Some(cell) => cell.2.push(r),
            None => cells.push((r.fixed_pr, &r.target_kind, vec![r])),
        }
    }
    cells
        .into_iter()
        .map(|(fixed_pr, kind, rs)| {
            let n = rs.len() as f64;
            let mean = |f: fn(&ReportRow) -> f64| rs.iter().map(|r| f(r)).sum::<f64>() / n;
            SummaryRow {
                schema: CSV_SCHEMA_VERSION,
                fixed_pr,
                target_kind: kind.into(),
                runs: rs.len(),
                observed_pr: mean(|r| r.observed_pr),
                gap: mean(|r| r.gap),
                accuracy: mean(|r| r.accuracy),
            }
        })
        .collect()
}

/// Column names, written as the header even when a file has no rows.
pub trait Columns {
    const COLUMNS: &'static [&'static str];
}

impl Columns for ReportRow {
    const COLUMNS: &'static [&'static str] =
        &["schema", "fixed_pr", "observed_pr", "gap", "target_kind", "accuracy", "seed", "wall_time"];
}

impl Columns for MetricsRow {
    const COLUMNS: &'static [&'static str] = &["schema", "epoch", "loss", "ce", "kld", "observed_pr", "lr", "test_acc"];
}

impl Columns for FailureRow {
    const COLUMNS: &'static [&'static str] = &["schema", "fixed_pr", "target_kind", "seed", "error"];
}

impl Columns for SummaryRow {
    const COLUMNS: &'static [&'static str] =
        &["schema", "fixed_pr", "target_kind", "runs", "observed_pr", "gap", "accuracy"];
}

pub fn write_csv<T: Serialize + Columns>(path: &Path, rows: &[T]) -> Result<()> {
    let file = File::create(path).map_err(|e| FormatError::io(path, e))?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
    w.write_record(T::COLUMNS).map_err(|e| FormatError::io(path, e.into()))?;
    for r in rows {
        w.serialize(r).map_err(|e| FormatError::io(path, e.into()))?;
    }
    w.flush().map_err(|e| FormatError::io(path, e))
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| FormatError::io(path, e))?;
    let mut reader = csv::Reader::from_reader(file);
    let mut out = Vec::new();
    for row in reader.deserialize::<T>() {
        out.push(row.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            FormatError::parse(path, line, e.to_string())
        })?);
    }
    Ok(out)
}

pub fn write_metrics(path: &Path, history: &[EpochMetrics]) -> Result<()> {
    let rows: Vec<MetricsRow> = history.iter().map(MetricsRow::from).collect();
    write_csv(path, &rows)
}

pub fn write_report(path: &Path, rows: &[ReportRow]) -> Result<()> {
    write_csv(path, rows)
}

/// Reads a report, rejecting rows written under another schema version.
pub fn read_report(path: &Path) -> Result<Vec<ReportRow>> {
    let rows: Vec<ReportRow> = read_csv(path)?;
    if let Some(r) = rows.iter().find(|r| r.schema != CSV_SCHEMA_VERSION) {
        return Err(FormatError::Version {
            path: path.to_path_buf(),
            what: "report",
            found: r.schema,
            expected: CSV_SCHEMA_VERSION,
        });
    }
    Ok(rows)
}
