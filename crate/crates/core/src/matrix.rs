//! Prediction matrices and their CSV representation.
//!
//! On disk a prediction matrix is a CSV file whose header row holds the
//! sample ids (after a leading id-column label) and whose data rows hold one
//! model each: `model_id, y_1, ..., y_n`. Files with samples as rows can be
//! read with [`Orientation::SamplesAsRows`].

use std::collections::HashSet;
use std::io::{Read, Write};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Orientation {
    #[default]
    ModelsAsRows,
    SamplesAsRows,
}

/// A d x n matrix of raw predictions: one row per model, one column per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionMatrix {
    values: DMatrix<f64>,
    model_ids: Vec<String>,
    sample_ids: Vec<String>,
}

impl PredictionMatrix {
    pub fn new(values: DMatrix<f64>, model_ids: Vec<String>, sample_ids: Vec<String>) -> Result<Self> {
        let (d, n) = values.shape();
        if d < 2 || n < 2 {
            return Err(Error::InvalidMatrix(format!("need at least 2 models and 2 samples, got {d}x{n}")));
        }
        if model_ids.len() != d || sample_ids.len() != n {
            return Err(Error::InvalidMatrix(format!(
                "{} model ids and {} sample ids for a {d}x{n} matrix",
                model_ids.len(),
                sample_ids.len()
            )));
        }
        if let Some((idx, _)) = values.iter().enumerate().find(|(_, x)| !x.is_finite()) {
            // column-major storage
            let (i, j) = (idx % d, idx / d);
            return Err(Error::InvalidMatrix(format!(
                "non-finite value for model `{}`, sample `{}`",
                model_ids[i], sample_ids[j]
            )));
        }
        check_unique(&model_ids, "model")?;
        check_unique(&sample_ids, "sample")?;
        Ok(Self { values, model_ids, sample_ids })
    }

    /// Builds a matrix with generated ids `m0..` and `s0..`.
    pub fn from_values(values: DMatrix<f64>) -> Result<Self> {
        let (d, n) = values.shape();
        let model_ids = (0..d).map(|i| format!("m{i}")).collect();
        let sample_ids = (0..n).map(|j| format!("s{j}")).collect();
        Self::new(values, model_ids, sample_ids)
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn model_ids(&self) -> &[String] {
        &self.model_ids
    }

    pub fn sample_ids(&self) -> &[String] {
        &self.sample_ids
    }

    pub fn n_models(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_samples(&self) -> usize {
        self.values.ncols()
    }

    /// Restricts the matrix to the given sample columns, in order.
    pub fn select_samples(&self, columns: &[usize]) -> Result<Self> {
        let values = self.values.select_columns(columns);
        let sample_ids = columns.iter().map(|&j| self.sample_ids[j].clone()).collect();
        Self::new(values, self.model_ids.clone(), sample_ids)
    }

    pub fn read_csv<R: Read>(reader: R, orientation: Orientation) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(reader);

        let mut records = rdr.records();
        let header = match records.next() {
            Some(rec) => rec?,
            None => return Err(Error::Parse { line: 1, message: "empty input".into() }),
        };
        let width = header.len();
        if width < 3 {
            return Err(Error::Parse {
                line: 1,
                message: format!("header has {width} fields; need an id column and at least 2 value columns"),
            });
        }
        let col_ids: Vec<String> = header.iter().skip(1).map(str::to_owned).collect();

        let mut row_ids = Vec::new();
        let mut data = Vec::new();
        for rec in records {
            let rec = rec?;
            let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
            if rec.len() == 1 && rec.get(0).is_some_and(str::is_empty) {
                continue;
            }
            if rec.len() != width {
                return Err(Error::Parse {
                    line,
                    message: format!("ragged row: expected {width} fields, found {}", rec.len()),
                });
            }
            row_ids.push(rec[0].to_owned());
            for (k, field) in rec.iter().skip(1).enumerate() {
                let x: f64 = field.parse().map_err(|_| Error::Parse {
                    line,
                    message: format!("column {} (`{}`): cannot parse `{field}` as a number", k + 2, col_ids[k]),
                })?;
                data.push(x);
            }
        }

        let rows = row_ids.len();
        let cols = col_ids.len();
        let m = DMatrix::from_row_slice(rows, cols, &data);
        match orientation {
            Orientation::ModelsAsRows => Self::new(m, row_ids, col_ids),
            Orientation::SamplesAsRows => Self::new(m.transpose(), col_ids, row_ids),
        }
    }

    /// Writes the matrix with models as rows; the first header cell is `model_id`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header = Vec::with_capacity(self.n_samples() + 1);
        header.push("model_id".to_owned());
        header.extend(self.sample_ids.iter().cloned());
        wtr.write_record(&header)?;
        for (i, id) in self.model_ids.iter().enumerate() {
            let mut row = Vec::with_capacity(self.n_samples() + 1);
            row.push(id.clone());
            row.extend(self.values.row(i).iter().map(|x| format_f64(*x)));
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

fn check_unique(ids: &[String], what: &str) -> Result<()> {
    let mut seen = HashSet::with_capacity(ids.len());
    for id in ids {
        if !seen.insert(id.as_str()) {
            return Err(Error::InvalidMatrix(format!("duplicate {what} id `{id}`")));
        }
    }
    Ok(())
}

/// Shortest representation that round-trips through `str::parse::<f64>`;
/// negative zero is written as `0.0`.
pub fn format_f64(x: f64) -> String {
    let x = if x == 0.0 { 0.0 } else { x };
    format!("{x:?}")
}
