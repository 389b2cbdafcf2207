//! Cohort CSV ingestion.

use std::collections::HashSet;
use std::path::Path;

use ispd_core::likelihoods::DeptRecord;

use crate::error::{CliError, CliResult};

/// Which observation column a cohort file carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Column {
    ScaledAvg,
    Ispd,
}

impl Column {
    pub fn name(self) -> &'static str {
        match self {
            Column::ScaledAvg => "scaled_avg",
            Column::Ispd => "ispd",
        }
    }
}

#[derive(Debug, Clone)]
pub struct CohortFile {
    pub column: Column,
    pub records: Vec<DeptRecord>,
}

impl CohortFile {
    pub fn max_size(&self) -> u32 {
        self.records.iter().map(|r| r.size).max().unwrap_or(0)
    }
}

fn find(headers: &csv::StringRecord, name: &str) -> Option<usize> {
    headers.iter().position(|h| h.trim() == name)
}

fn field<'a>(row: &'a csv::StringRecord, idx: usize, line: u64, col: &str) -> CliResult<&'a str> {
    match row.get(idx).map(str::trim) {
        Some(s) if !s.is_empty() => Ok(s),
        _ => Err(CliError::Input(format!("line {line}, column '{col}': missing value"))),
    }
}

fn parse_size(s: &str, line: u64) -> CliResult<u32> {
    let n: u32 = s
        .parse()
        .map_err(|_| CliError::Input(format!("line {line}, column 'n_products': '{s}' is not a non-negative integer")))?;
    if n < 2 {
        return Err(CliError::Input(format!("line {line}, column 'n_products': {n} < 2")));
    }
    Ok(n)
}

fn parse_real(s: &str, line: u64, col: &str) -> CliResult<f64> {
    s.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| CliError::Input(format!("line {line}, column '{col}': '{s}' is not a finite number")))
}

fn open(path: &Path) -> CliResult<csv::Reader<std::fs::File>> {
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn line_of(row: &csv::StringRecord, fallback: u64) -> u64 {
    row.position().map_or(fallback, |p| p.line())
}

pub fn read_cohort(path: &Path) -> CliResult<CohortFile> {
    let mut rdr = open(path)?;
    let headers = rdr
        .headers()
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?
        .clone();
    let id_col = find(&headers, "dept_id").ok_or_else(|| CliError::Input("missing column 'dept_id'".into()))?;
    let n_col = find(&headers, "n_products").ok_or_else(|| CliError::Input("missing column 'n_products'".into()))?;
    let column = match (find(&headers, "scaled_avg"), find(&headers, "ispd")) {
        (Some(i), None) => (Column::ScaledAvg, i),
        (None, Some(i)) => (Column::Ispd, i),
        (Some(_), Some(_)) => {
            return Err(CliError::Input("columns 'scaled_avg' and 'ispd' are mutually exclusive".into()))
        }
        (None, None) => return Err(CliError::Input("need a 'scaled_avg' or an 'ispd' column".into())),
    };
    let mut seen = HashSet::new();
    let mut records = Vec::new();
    for (k, row) in rdr.records().enumerate() {
        let row = row.map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        let line = line_of(&row, k as u64 + 2);
        let id = field(&row, id_col, line, "dept_id")?.to_string();
        if !seen.insert(id.clone()) {
            return Err(CliError::Input(format!("line {line}: duplicate dept_id '{id}'")));
        }
        let n = parse_size(field(&row, n_col, line, "n_products")?, line)?;
        let v = parse_real(field(&row, column.1, line, column.0.name())?, line, column.0.name())?;
        let rec = match column.0 {
            Column::ScaledAvg => DeptRecord::scaled(id, n, v),
            Column::Ispd => DeptRecord::ispd(id, n, v),
        }
        .map_err(|e| CliError::Input(format!("line {line}, column '{}': {e}", column.0.name())))?;
        records.push(rec);
    }
    if records.is_empty() {
        return Err(CliError::Input(format!("{}: no data rows", path.display())));
    }
    Ok(CohortFile {
        column: column.0,
        records,
    })
}

/// Department sizes from the `n_products` column of a CSV file.
pub fn read_sizes(path: &Path) -> CliResult<Vec<u32>> {
    let mut rdr = open(path)?;
    let headers = rdr
        .headers()
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?
        .clone();
    let n_col = find(&headers, "n_products").ok_or_else(|| CliError::Input("missing column 'n_products'".into()))?;
    let mut sizes = Vec::new();
    for (k, row) in rdr.records().enumerate() {
        let row = row.map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        let line = line_of(&row, k as u64 + 2);
        sizes.push(parse_size(field(&row, n_col, line, "n_products")?, line)?);
    }
    if sizes.len() < 2 {
        return Err(CliError::Input(format!("{}: need at least 2 departments", path.display())));
    }
    Ok(sizes)
}

/// Parses `A,B` into two reals.
pub fn parse_pair(s: &str) -> Result<(f64, f64), String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    match parts.as_slice() {
        [a, b] => {
            let a: f64 = a.parse().map_err(|_| format!("'{a}' is not a number"))?;
            let b: f64 = b.parse().map_err(|_| format!("'{b}' is not a number"))?;
            Ok((a, b))
        }
        _ => Err(format!("expected A,B but got '{s}'")),
    }
}
