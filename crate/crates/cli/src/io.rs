//! CSV tables in and out. Every cell is parsed as a float; the header row
//! names the columns.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use ndarray::{Array1, Array2, ArrayView1};
use serde::Serialize;

pub struct Table {
    pub headers: Vec<String>,
    /// `rows × headers.len()`
    pub values: Array2<f64>,
}

impl Table {
    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.headers.iter().position(|h| h == name)
    }

    /// Splits off `response`; the remaining columns are the predictors.
    pub fn split_response(&self, response: &str, path: &Path) -> Result<(Array1<f64>, Array2<f64>)> {
        let Some(k) = self.column_index(response) else {
            bail!("{}: no column named '{response}'", path.display());
        };
        Ok((self.values.column(k).to_owned(), self.without(k)))
    }

    /// Predictor matrix, dropping `response` when present.
    pub fn predictors(&self, response: &str) -> Array2<f64> {
        match self.column_index(response) {
            Some(k) => self.without(k),
            None => self.values.clone(),
        }
    }

    fn without(&self, k: usize) -> Array2<f64> {
        let keep: Vec<usize> = (0..self.headers.len()).filter(|&j| j != k).collect();
        let mut x = Array2::zeros((self.values.nrows(), keep.len()));
        for (dst, &src) in keep.iter().enumerate() {
            x.column_mut(dst).assign(&self.values.column(src));
        }
        x
    }
}

pub fn read_table(path: &Path) -> Result<Table> {
    let mut rdr = csv::Reader::from_path(path).with_context(|| format!("cannot open {}", path.display()))?;
    let headers: Vec<String> = rdr
        .headers()
        .with_context(|| format!("{}: unreadable header", path.display()))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if headers.is_empty() {
        bail!("{}: empty header", path.display());
    }
    let mut flat = Vec::new();
    let mut rows = 0usize;
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.with_context(|| format!("{}: malformed row at line {line}", path.display()))?;
        if rec.len() != headers.len() {
            bail!("{}: line {line} has {} fields, header has {}", path.display(), rec.len(), headers.len());
        }
        for (j, field) in rec.iter().enumerate() {
            let v: f64 = field
                .trim()
                .parse()
                .with_context(|| format!("{}: line {line}, column '{}': '{field}' is not a number", path.display(), headers[j]))?;
            flat.push(v);
        }
        rows += 1;
    }
    let values = Array2::from_shape_vec((rows, headers.len()), flat)?;
    Ok(Table { headers, values })
}

/// Writes named equal-length columns.
pub fn write_columns(path: &Path, columns: &[(&str, ArrayView1<f64>)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("cannot create {}", path.display()))?;
    w.write_record(columns.iter().map(|(name, _)| *name))?;
    let n = columns.first().map_or(0, |(_, c)| c.len());
    for i in 0..n {
        w.write_record(columns.iter().map(|(_, c)| c[i].to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let file = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    let mut out = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}
