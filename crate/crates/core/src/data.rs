//! Per-environment datasets and their CSV representation.
//!
//! A CSV file holds one row per sample with the header `env,x1,...,xd[,y]`.
//! Rows are grouped into [`EnvDataset`]s by the `env` column, in order of
//! first appearance; within an environment the file order is kept. The pooled
//! row order used everywhere else in the crate is the concatenation of those
//! groups.

use std::fmt;
use std::io::{Read, Write};

use indexmap::IndexMap;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Opaque environment identifier. Two labels are the same environment iff the
/// strings are equal; no arithmetic is ever done on them.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EnvLabel(pub String);

impl EnvLabel {
    pub fn new(label: impl Into<String>) -> Self {
        EnvLabel(label.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for EnvLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for EnvLabel {
    fn from(s: &str) -> Self {
        EnvLabel(s.to_owned())
    }
}

impl From<u32> for EnvLabel {
    fn from(v: u32) -> Self {
        EnvLabel(v.to_string())
    }
}

/// i.i.d. samples of the predictors (and optionally the response) for a
/// single environment.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvDataset {
    pub env: EnvLabel,
    pub x: DMatrix<f64>,
    pub y: Option<DVector<f64>>,
}

impl EnvDataset {
    pub fn new(env: EnvLabel, x: DMatrix<f64>, y: Option<DVector<f64>>) -> Result<Self> {
        if x.nrows() == 0 || x.ncols() == 0 {
            return Err(Error::EmptyInput);
        }
        if let Some(y) = &y {
            if y.len() != x.nrows() {
                return Err(Error::LengthMismatch {
                    expected: x.nrows(),
                    got: y.len(),
                });
            }
        }
        Ok(EnvDataset { env, x, y })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    /// The response column, or [`Error::MissingResponse`].
    pub fn response(&self) -> Result<&DVector<f64>> {
        self.y
            .as_ref()
            .ok_or_else(|| Error::MissingResponse(self.env.clone()))
    }

    /// Copy of the dataset with the response dropped.
    pub fn without_response(&self) -> Self {
        EnvDataset {
            env: self.env.clone(),
            x: self.x.clone(),
            y: None,
        }
    }

    /// Sub-dataset made of the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        EnvDataset {
            env: self.env.clone(),
            x: self.x.select_rows(rows),
            y: self.y.as_ref().map(|y| y.select_rows(rows)),
        }
    }
}

/// Common predictor count of a non-empty collection of datasets.
pub fn common_dim(datasets: &[EnvDataset]) -> Result<usize> {
    let first = datasets.first().ok_or(Error::EmptyInput)?;
    let d = first.d();
    for ds in datasets {
        if ds.d() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: ds.d(),
            });
        }
    }
    Ok(d)
}

pub fn pooled_rows(datasets: &[EnvDataset]) -> usize {
    datasets.iter().map(EnvDataset::n).sum()
}

/// Stack the predictor blocks in pooled row order.
pub fn pooled_x(datasets: &[EnvDataset]) -> Result<DMatrix<f64>> {
    let d = common_dim(datasets)?;
    let n = pooled_rows(datasets);
    let mut out = DMatrix::zeros(n, d);
    let mut offset = 0;
    for ds in datasets {
        out.rows_mut(offset, ds.n()).copy_from(&ds.x);
        offset += ds.n();
    }
    Ok(out)
}

/// Stack the response blocks in pooled row order.
pub fn pooled_y(datasets: &[EnvDataset]) -> Result<DVector<f64>> {
    if datasets.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut values = Vec::with_capacity(pooled_rows(datasets));
    for ds in datasets {
        values.extend(ds.response()?.iter());
    }
    Ok(DVector::from_vec(values))
}

/// Environment label of every pooled row.
pub fn pooled_labels(datasets: &[EnvDataset]) -> Vec<EnvLabel> {
    datasets
        .iter()
        .flat_map(|ds| std::iter::repeat_n(ds.env.clone(), ds.n()))
        .collect()
}

fn header_for(d: usize, with_y: bool) -> Vec<String> {
    let mut header = Vec::with_capacity(d + 2);
    header.push("env".to_owned());
    header.extend((1..=d).map(|j| format!("x{j}")));
    if with_y {
        header.push("y".to_owned());
    }
    header
}

/// Write datasets as CSV. The `y` column is emitted only when every dataset
/// carries a response.
pub fn write_csv<W: Write>(writer: W, datasets: &[EnvDataset]) -> Result<()> {
    let d = common_dim(datasets)?;
    let with_y = datasets.iter().all(|ds| ds.y.is_some());
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(header_for(d, with_y))?;
    let mut record = Vec::with_capacity(d + 2);
    for ds in datasets {
        for i in 0..ds.n() {
            record.clear();
            record.push(ds.env.0.clone());
            record.extend(ds.x.row(i).iter().map(|v| v.to_string()));
            if with_y {
                record.push(ds.response()?[i].to_string());
            }
            w.write_record(&record)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Parse a CSV with header `env,x1,...,xd[,y]` into per-environment datasets.
pub fn read_csv<R: Read>(reader: R) -> Result<Vec<EnvDataset>> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let header: Vec<String> = r.headers()?.iter().map(|h| h.trim().to_owned()).collect();
    if header.first().map(String::as_str) != Some("env") {
        return Err(Error::Schema("first column must be `env`".into()));
    }
    let with_y = header.last().map(String::as_str) == Some("y");
    let d = header.len() - 1 - usize::from(with_y);
    if d == 0 {
        return Err(Error::Schema("no predictor columns".into()));
    }
    if header != header_for(d, with_y) {
        return Err(Error::Schema(format!(
            "expected header `{}`",
            header_for(d, with_y).join(",")
        )));
    }

    // label -> (flattened row-major x, y)
    let mut groups: IndexMap<String, (Vec<f64>, Vec<f64>)> = IndexMap::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        if rec.len() != header.len() {
            return Err(Error::Schema(format!(
                "row {} has {} fields, expected {}",
                line + 1,
                rec.len(),
                header.len()
            )));
        }
        let entry = groups.entry(rec[0].trim().to_owned()).or_default();
        for j in 0..d {
            entry.0.push(parse_field(&rec[j + 1], line)?);
        }
        if with_y {
            entry.1.push(parse_field(&rec[d + 1], line)?);
        }
    }
    if groups.is_empty() {
        return Err(Error::EmptyInput);
    }

    groups
        .into_iter()
        .map(|(label, (xs, ys))| {
            let n = xs.len() / d;
            let x = DMatrix::from_row_slice(n, d, &xs);
            let y = with_y.then(|| DVector::from_vec(ys));
            EnvDataset::new(EnvLabel(label), x, y)
        })
        .collect()
}

fn parse_field(field: &str, line: usize) -> Result<f64> {
    let v: f64 = field
        .trim()
        .parse()
        .map_err(|_| Error::Schema(format!("row {}: `{field}` is not a number", line + 1)))?;
    if !v.is_finite() {
        return Err(Error::NonFiniteInput);
    }
    Ok(v)
}
