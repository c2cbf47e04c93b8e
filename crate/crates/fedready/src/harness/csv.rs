//! Sweep result rows and their CSV serialization. Floats are written
//! with 17 significant digits so reading a file back reproduces the
//! exact values; failed cells carry NaN readiness/metric fields and are
//! skipped by the correlation stage.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

pub const CSV_HEADER: &str =
    "dataset,K,alpha,seed,cohesion,neg_dispersion,density,cdi,avg_entropy,final_metric,wall_time_s";

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub dataset: String,
    pub k: usize,
    pub alpha: f64,
    pub seed: u64,
    pub cohesion: f64,
    pub neg_dispersion: f64,
    pub density: f64,
    pub cdi: f64,
    pub avg_entropy: f64,
    pub final_metric: f64,
    pub wall_time_s: f64,
}

impl SweepRow {
    /// A failed cell records its identity with NaN measurements.
    pub fn failed(dataset: &str, k: usize, alpha: f64, seed: u64, wall_time_s: f64) -> SweepRow {
        SweepRow {
            dataset: dataset.to_string(),
            k,
            alpha,
            seed,
            cohesion: f64::NAN,
            neg_dispersion: f64::NAN,
            density: f64::NAN,
            cdi: f64::NAN,
            avg_entropy: f64::NAN,
            final_metric: f64::NAN,
            wall_time_s,
        }
    }

    /// True when every measurement is usable for correlation.
    pub fn is_complete(&self) -> bool {
        [self.cohesion, self.neg_dispersion, self.density, self.cdi, self.avg_entropy, self.final_metric]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// Canonical row order: (dataset, K, alpha, seed).
pub fn sort_rows(rows: &mut [SweepRow]) {
    rows.sort_by(|a, b| {
        a.dataset
            .cmp(&b.dataset)
            .then(a.k.cmp(&b.k))
            .then(a.alpha.total_cmp(&b.alpha))
            .then(a.seed.cmp(&b.seed))
    });
}

fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn row_to_line(row: &SweepRow) -> Result<String> {
    if row.dataset.is_empty() || row.dataset.contains(',') || row.dataset.contains('\n') {
        return Err(Error::Csv(format!("dataset tag {:?} is not a valid CSV field", row.dataset)));
    }
    Ok(format!(
        "{},{},{},{},{},{},{},{},{},{},{}",
        row.dataset,
        row.k,
        fmt(row.alpha),
        row.seed,
        fmt(row.cohesion),
        fmt(row.neg_dispersion),
        fmt(row.density),
        fmt(row.cdi),
        fmt(row.avg_entropy),
        fmt(row.final_metric),
        fmt(row.wall_time_s),
    ))
}

/// Writes header plus rows, replacing any existing file.
pub fn write_csv(rows: &[SweepRow], path: &Path) -> Result<()> {
    let mut text = String::with_capacity(64 * (rows.len() + 1));
    text.push_str(CSV_HEADER);
    text.push('\n');
    for row in rows {
        text.push_str(&row_to_line(row)?);
        text.push('\n');
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn parse_field<T: std::str::FromStr>(line: usize, name: &str, raw: &str) -> Result<T> {
    raw.parse()
        .map_err(|_| Error::Csv(format!("line {line}: column {name}: cannot parse {raw:?}")))
}

pub fn parse_csv(text: &str) -> Result<Vec<SweepRow>> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Csv("empty file: missing header".into()))?;
    if header != CSV_HEADER {
        let got: Vec<&str> = header.split(',').collect();
        for expected in CSV_HEADER.split(',') {
            if !got.contains(&expected) {
                return Err(Error::Csv(format!("missing column {expected} in header")));
            }
        }
        return Err(Error::Csv(format!(
            "header mismatch: expected {CSV_HEADER:?}, got {header:?}"
        )));
    }
    let mut rows = Vec::new();
    for (i, raw) in lines.enumerate() {
        let line = i + 2;
        if raw.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split(',').collect();
        if fields.len() != 11 {
            return Err(Error::Csv(format!("line {line}: expected 11 fields, got {}", fields.len())));
        }
        if fields[0].is_empty() {
            return Err(Error::Csv(format!("line {line}: column dataset: empty")));
        }
        rows.push(SweepRow {
            dataset: fields[0].to_string(),
            k: parse_field(line, "K", fields[1])?,
            alpha: parse_field(line, "alpha", fields[2])?,
            seed: parse_field(line, "seed", fields[3])?,
            cohesion: parse_field(line, "cohesion", fields[4])?,
            neg_dispersion: parse_field(line, "neg_dispersion", fields[5])?,
            density: parse_field(line, "density", fields[6])?,
            cdi: parse_field(line, "cdi", fields[7])?,
            avg_entropy: parse_field(line, "avg_entropy", fields[8])?,
            final_metric: parse_field(line, "final_metric", fields[9])?,
            wall_time_s: parse_field(line, "wall_time_s", fields[10])?,
        });
    }
    Ok(rows)
}

pub fn read_csv(path: &Path) -> Result<Vec<SweepRow>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_csv(&text)
}
