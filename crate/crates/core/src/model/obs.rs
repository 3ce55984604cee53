//! Observation tables: one row per observation, named numeric columns.
//!
//! The CSV layout is the obvious one — a header row of field names followed by
//! one line per observation — so tables round-trip through any spreadsheet.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// A dense table of observations.
#[derive(Clone, Debug, PartialEq)]
pub struct ObsTable {
    columns: Vec<String>,
    /// Row-major storage, `rows.len() == n_obs`, each row `columns.len()` long.
    rows: Vec<Vec<f64>>,
}

impl ObsTable {
    pub fn new(columns: Vec<String>, rows: Vec<Vec<f64>>) -> Result<Self> {
        if columns.is_empty() {
            return Err(Error::invalid("observation table needs at least one column"));
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != columns.len() {
                return Err(Error::invalid(format!(
                    "row {i} has {} fields, expected {}",
                    row.len(),
                    columns.len()
                )));
            }
            if let Some(v) = row.iter().find(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("non-finite value {v} in observation row {i}")));
            }
        }
        Ok(Self { columns, rows })
    }

    pub fn n_obs(&self) -> usize {
        self.rows.len()
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i]
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// All values of one named column.
    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let idx = self
            .column_index(name)
            .ok_or_else(|| Error::invalid(format!("no column named {name:?}")))?;
        Ok(self.rows.iter().map(|r| r[idx]).collect())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let columns: Vec<String> = rdr.headers()?.iter().map(|s| s.trim().to_string()).collect();
        let mut rows = Vec::new();
        for record in rdr.records() {
            let record = record?;
            let mut row = Vec::with_capacity(columns.len());
            for field in record.iter() {
                let v: f64 = field.trim().parse().map_err(|_| {
                    Error::invalid(format!("cannot parse {field:?} as a number in row {}", rows.len()))
                })?;
                row.push(v);
            }
            rows.push(row);
        }
        Self::new(columns, rows)
    }

    pub fn read_csv_path(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_csv(file)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(&self.columns)?;
        for row in &self.rows {
            wtr.write_record(row.iter().map(|v| v.to_string()))?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn write_csv_path(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(file)
    }
}
