//! Plot-ready CSV persistence with deterministic formatting: 17
//! significant digits, '.' decimal separator, '\n' line endings. Values
//! written and re-parsed are bit-identical.

use std::io::Write;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CsvError {
    #[error("cannot write {path}: {source}")]
    Write {
        path: String,
        source: std::io::Error,
    },
    #[error("cannot read {path}: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed CSV {path} at line {line}: {reason}")]
    Malformed {
        path: String,
        line: usize,
        reason: String,
    },
}

/// A named-column table of f64 series, one row per grid time.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl SeriesTable {
    pub fn new(columns: Vec<String>) -> Self {
        Self {
            columns,
            rows: Vec::new(),
        }
    }

    pub fn push_row(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// All values of one column, by name.
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let idx = self.column_index(name)?;
        Some(self.rows.iter().map(|r| r[idx]).collect())
    }
}

/// 17-significant-digit scientific notation; round-trips any finite f64.
pub fn format_value(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_csv(table: &SeriesTable, path: &Path) -> Result<(), CsvError> {
    let mut buf = String::with_capacity(32 * (table.rows.len() + 1) * table.columns.len().max(1));
    buf.push_str(&table.columns.join(","));
    buf.push('\n');
    for row in &table.rows {
        let mut first = true;
        for v in row {
            if !first {
                buf.push(',');
            }
            buf.push_str(&format_value(*v));
            first = false;
        }
        buf.push('\n');
    }
    let mut file = std::fs::File::create(path).map_err(|source| CsvError::Write {
        path: path.display().to_string(),
        source,
    })?;
    file.write_all(buf.as_bytes()).map_err(|source| CsvError::Write {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_csv(path: &Path) -> Result<SeriesTable, CsvError> {
    let text = std::fs::read_to_string(path).map_err(|source| CsvError::Read {
        path: path.display().to_string(),
        source,
    })?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| CsvError::Malformed {
        path: path.display().to_string(),
        line: 1,
        reason: "missing header".into(),
    })?;
    let columns: Vec<String> = header.split(',').map(str::to_string).collect();
    let mut table = SeriesTable::new(columns);
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let row: Result<Vec<f64>, _> = line.split(',').map(str::parse::<f64>).collect();
        let row = row.map_err(|e| CsvError::Malformed {
            path: path.display().to_string(),
            line: i + 2,
            reason: e.to_string(),
        })?;
        if row.len() != table.columns.len() {
            return Err(CsvError::Malformed {
                path: path.display().to_string(),
                line: i + 2,
                reason: format!(
                    "{} fields, expected {}",
                    row.len(),
                    table.columns.len()
                ),
            });
        }
        table.rows.push(row);
    }
    Ok(table)
}
