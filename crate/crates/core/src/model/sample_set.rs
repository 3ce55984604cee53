//! Labeled draw matrices produced by the samplers.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Which inference target a sample set was drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleSource {
    Cut,
    Full,
    SemiModular,
    Direct,
}

impl SampleSource {
    fn as_str(self) -> &'static str {
        match self {
            SampleSource::Cut => "cut",
            SampleSource::Full => "full",
            SampleSource::SemiModular => "semi_modular",
            SampleSource::Direct => "direct",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "cut" => Ok(SampleSource::Cut),
            "full" => Ok(SampleSource::Full),
            "semi_modular" => Ok(SampleSource::SemiModular),
            "direct" => Ok(SampleSource::Direct),
            other => Err(Error::invalid(format!("unknown sample source {other:?}"))),
        }
    }
}

/// An S x d matrix of posterior draws with column names and provenance
/// metadata (seed, strategy, acceptance rates, warnings).
#[derive(Debug, Clone)]
pub struct SampleSet {
    names: Vec<String>,
    draws: DMatrix<f64>,
    source: SampleSource,
    meta: BTreeMap<String, String>,
}

impl SampleSet {
    pub fn new(names: Vec<String>, draws: DMatrix<f64>, source: SampleSource) -> Result<Self> {
        if names.is_empty() || names.len() != draws.ncols() {
            return Err(Error::invalid(format!(
                "{} column names for a matrix with {} columns",
                names.len(),
                draws.ncols()
            )));
        }
        if draws.nrows() == 0 {
            return Err(Error::invalid("a sample set needs at least one draw"));
        }
        if draws.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("sample draws must be finite"));
        }
        Ok(Self { names, draws, source, meta: BTreeMap::new() })
    }

    /// Build from row vectors (each one draw).
    pub fn from_rows(names: Vec<String>, rows: &[DVector<f64>], source: SampleSource) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::invalid("a sample set needs at least one draw"));
        }
        let d = names.len();
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::invalid("draw length does not match column names"));
        }
        let draws = DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]);
        Self::new(names, draws, source)
    }

    pub fn n_draws(&self) -> usize {
        self.draws.nrows()
    }

    pub fn dim(&self) -> usize {
        self.draws.ncols()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn source(&self) -> SampleSource {
        self.source
    }

    pub fn draws(&self) -> &DMatrix<f64> {
        &self.draws
    }

    /// One draw as a row slice view.
    pub fn row(&self, i: usize) -> Vec<f64> {
        self.draws.row(i).iter().copied().collect()
    }

    /// All draws of one named coordinate.
    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let j = self
            .names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::invalid(format!("no sample column named {name:?}")))?;
        Ok(self.draws.column(j).iter().copied().collect())
    }

    /// Column index of a named coordinate.
    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::invalid(format!("no sample column named {name:?}")))
    }

    /// Restrict to a contiguous block of columns (e.g. the phi block).
    pub fn select_columns(&self, start: usize, len: usize) -> Result<SampleSet> {
        if start + len > self.dim() || len == 0 {
            return Err(Error::invalid("column selection out of range"));
        }
        let names = self.names[start..start + len].to_vec();
        let draws = self.draws.columns(start, len).into_owned();
        let mut out = SampleSet::new(names, draws, self.source)?;
        out.meta = self.meta.clone();
        Ok(out)
    }

    pub fn meta(&self) -> &BTreeMap<String, String> {
        &self.meta
    }

    pub fn set_meta(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.meta.insert(key.into(), value.into());
    }

    /// Column means.
    pub fn mean(&self) -> DVector<f64> {
        let s = self.n_draws() as f64;
        DVector::from_iterator(self.dim(), (0..self.dim()).map(|j| self.draws.column(j).sum() / s))
    }

    /// Sample covariance (denominator S-1; zero matrix for a single draw).
    pub fn covariance(&self) -> DMatrix<f64> {
        let s = self.n_draws();
        let d = self.dim();
        if s < 2 {
            return DMatrix::zeros(d, d);
        }
        let mean = self.mean();
        let mut cov = DMatrix::zeros(d, d);
        for i in 0..s {
            let dev = DVector::from_iterator(d, (0..d).map(|j| self.draws[(i, j)] - mean[j]));
            cov += &dev * dev.transpose();
        }
        cov / (s as f64 - 1.0)
    }

    /// Write the draws as CSV (header = column names) and the metadata,
    /// source, and names as a JSON sidecar next to it (`<path>.meta.json`).
    pub fn write_csv_path(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(file)?;
        let sidecar = Self::sidecar_path(path);
        let json = serde_json::json!({
            "source": self.source.as_str(),
            "names": self.names,
            "n_draws": self.n_draws(),
            "meta": self.meta,
        });
        std::fs::write(sidecar, serde_json::to_string_pretty(&json)?)?;
        Ok(())
    }

    /// Write only the draw matrix as CSV to any writer.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(&self.names)?;
        for i in 0..self.n_draws() {
            let row: Vec<String> = (0..self.dim()).map(|j| self.draws[(i, j)].to_string()).collect();
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// Read draws back from a CSV written by `write_csv_path`, restoring
    /// source and metadata from the sidecar when present.
    pub fn read_csv_path(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let mut set = Self::read_csv(file, SampleSource::Direct)?;
        let sidecar = Self::sidecar_path(path);
        if sidecar.exists() {
            let text = std::fs::read_to_string(sidecar)?;
            let v: serde_json::Value = serde_json::from_str(&text)?;
            if let Some(s) = v.get("source").and_then(|s| s.as_str()) {
                set.source = SampleSource::parse(s)?;
            }
            if let Some(map) = v.get("meta").and_then(|m| m.as_object()) {
                for (k, val) in map {
                    if let Some(s) = val.as_str() {
                        set.meta.insert(k.clone(), s.to_string());
                    }
                }
            }
        }
        Ok(set)
    }

    /// Read a draw matrix from any CSV reader (first row = column names).
    pub fn read_csv<R: Read>(reader: R, source: SampleSource) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let names: Vec<String> = rdr.headers()?.iter().map(|s| s.to_string()).collect();
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for record in rdr.records() {
            let record = record?;
            let row: std::result::Result<Vec<f64>, _> =
                record.iter().map(|s| s.trim().parse::<f64>()).collect();
            let row = row.map_err(|e| Error::invalid(format!("bad numeric field in samples CSV: {e}")))?;
            rows.push(row);
        }
        if rows.is_empty() {
            return Err(Error::invalid("samples CSV has no data rows"));
        }
        let d = names.len();
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::invalid("samples CSV has ragged rows"));
        }
        let draws = DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]);
        Self::new(names, draws, source)
    }

    fn sidecar_path(path: &Path) -> std::path::PathBuf {
        let mut s = path.as_os_str().to_os_string();
        s.push(".meta.json");
        std::path::PathBuf::from(s)
    }
}
