//! CSV ingestion. Every error names the file and, where one exists, the
//! line and column.

use std::collections::HashMap;
use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use nalgebra::DMatrix;
use sha2::{Digest, Sha256};

use geetgdr::datamodel::{validate_dataset, RawDataset};
use geetgdr::LongitudinalDataset;

pub const ID_COLUMN: &str = "subject_id";

/// A numeric table keyed by subject identifier.
#[derive(Debug)]
pub struct Table {
    pub path: PathBuf,
    pub columns: Vec<String>,
    pub row_ids: Vec<String>,
    /// 1-based line of each data row.
    pub lines: Vec<u64>,
    pub values: Vec<Vec<f64>>,
}

impl Table {
    fn index(&self) -> Result<HashMap<&str, usize>> {
        let mut map = HashMap::new();
        for (r, id) in self.row_ids.iter().enumerate() {
            if let Some(first) = map.insert(id.as_str(), r) {
                bail!(
                    "{}:{}: duplicate subject_id \"{id}\" (first seen on line {})",
                    self.path.display(),
                    self.lines[r],
                    self.lines[first]
                );
            }
        }
        Ok(map)
    }

    /// Rows reordered to follow `ids`; both tables must hold exactly the
    /// same subjects.
    pub fn aligned_to(&self, ids: &[String], reference: &Path) -> Result<Vec<Vec<f64>>> {
        let index = self.index()?;
        let missing: Vec<&str> = ids
            .iter()
            .filter(|id| !index.contains_key(id.as_str()))
            .map(String::as_str)
            .collect();
        let wanted: std::collections::HashSet<&str> = ids.iter().map(String::as_str).collect();
        let extra: Vec<&str> = self
            .row_ids
            .iter()
            .filter(|id| !wanted.contains(id.as_str()))
            .map(String::as_str)
            .collect();
        if !missing.is_empty() || !extra.is_empty() {
            let mut msg = format!(
                "{}: subjects do not match {}",
                self.path.display(),
                reference.display()
            );
            if !missing.is_empty() {
                msg += &format!("; missing {}", quoted(&missing));
            }
            if !extra.is_empty() {
                msg += &format!("; not in {}: {}", reference.display(), quoted(&extra));
            }
            bail!(msg);
        }
        Ok(ids.iter().map(|id| self.values[index[id.as_str()]].clone()).collect())
    }

    pub fn matrix(&self, rows: &[Vec<f64>]) -> DMatrix<f64> {
        DMatrix::from_fn(rows.len(), self.columns.len(), |i, j| rows[i][j])
    }
}

fn quoted(ids: &[&str]) -> String {
    const SHOWN: usize = 5;
    let mut s: Vec<String> = ids.iter().take(SHOWN).map(|id| format!("\"{id}\"")).collect();
    if ids.len() > SHOWN {
        s.push(format!("and {} more", ids.len() - SHOWN));
    }
    s.join(", ")
}

pub fn read_table(path: &Path) -> Result<Table> {
    let file = File::open(path).with_context(|| format!("{}: cannot open", path.display()))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let header = reader
        .headers()
        .map_err(|e| csv_error(path, e))?
        .clone();
    let first = header.get(0).unwrap_or("").trim_start_matches('\u{feff}');
    if first != ID_COLUMN {
        bail!(
            "{}:1:1: first column must be \"{ID_COLUMN}\", found \"{first}\"",
            path.display()
        );
    }
    let columns: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    if columns.is_empty() {
        bail!("{}:1: no data columns after \"{ID_COLUMN}\"", path.display());
    }
    for (c, name) in columns.iter().enumerate() {
        if name.trim().is_empty() {
            bail!("{}:1:{}: empty column name", path.display(), c + 2);
        }
        if let Some(prev) = columns[..c].iter().position(|n| n == name) {
            bail!(
                "{}:1:{}: duplicate column \"{name}\" (also column {})",
                path.display(),
                c + 2,
                prev + 2
            );
        }
    }

    let mut row_ids = Vec::new();
    let mut lines = Vec::new();
    let mut values = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map_or(0, |p| p.line());
        let id = record.get(0).unwrap_or("").to_string();
        if id.trim().is_empty() {
            bail!("{}:{line}:1: empty subject_id", path.display());
        }
        let mut row = Vec::with_capacity(columns.len());
        for (c, cell) in record.iter().skip(1).enumerate() {
            let v: f64 = cell.trim().parse().map_err(|_| {
                anyhow!(
                    "{}:{line}:{}: cannot parse \"{cell}\" as a number (column \"{}\")",
                    path.display(),
                    c + 2,
                    columns[c]
                )
            })?;
            if !v.is_finite() {
                bail!(
                    "{}:{line}:{}: non-finite value \"{cell}\" (column \"{}\")",
                    path.display(),
                    c + 2,
                    columns[c]
                );
            }
            row.push(v);
        }
        row_ids.push(id);
        lines.push(line);
        values.push(row);
    }
    if row_ids.is_empty() {
        bail!("{}: no data rows", path.display());
    }
    Ok(Table {
        path: path.to_path_buf(),
        columns,
        row_ids,
        lines,
        values,
    })
}

fn csv_error(path: &Path, e: csv::Error) -> anyhow::Error {
    match e.kind() {
        csv::ErrorKind::UnequalLengths {
            pos,
            expected_len,
            len,
        } => anyhow!(
            "{}:{}: row has {len} fields, header has {expected_len}",
            path.display(),
            pos.as_ref().map_or(0, |p| p.line())
        ),
        csv::ErrorKind::Utf8 { pos, err } => anyhow!(
            "{}:{}:{}: invalid UTF-8",
            path.display(),
            pos.as_ref().map_or(0, |p| p.line()),
            err.field() + 1
        ),
        _ => anyhow!("{}: {e}", path.display()),
    }
}

/// Joins expression and outcome tables on subject identifier, in the
/// expression file's row order.
pub fn load_dataset(expression: &Path, outcomes: &Path) -> Result<LongitudinalDataset> {
    let x = read_table(expression)?;
    x.index()?;
    let y = read_table(outcomes)?;
    let y_rows = y.aligned_to(&x.row_ids, expression)?;
    let ds = validate_dataset(RawDataset {
        subject_ids: x.row_ids.clone(),
        feature_names: x.columns.clone(),
        time_labels: y.columns.clone(),
        covariates: x.values.clone(),
        outcomes: y_rows,
    })
    .with_context(|| format!("{} + {}", expression.display(), outcomes.display()))?;
    Ok(ds)
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut file = File::open(path).with_context(|| format!("{}: cannot open", path.display()))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 1 << 16];
    loop {
        let read = file
            .read(&mut buf)
            .with_context(|| format!("{}: read failed", path.display()))?;
        if read == 0 {
            break;
        }
        hasher.update(&buf[..read]);
    }
    Ok(hex::encode(hasher.finalize()))
}
