//! Variables × samples data container with the preprocessing the estimators need.
//!
//! The sample covariance convention throughout is `Σ̂ = (1/T)·X·Xᵀ` on centered
//! data, and standardization uses the same divide-by-T variance.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector, DVectorView};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the rows of a delimited file map onto variables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Orientation {
    /// One line per variable, one field per sample.
    #[default]
    VariablesAsRows,
    /// One line per sample, one field per variable.
    SamplesAsRows,
}

#[derive(Debug, Clone)]
pub struct CsvOptions {
    pub delimiter: u8,
    pub has_header: bool,
    pub orientation: Orientation,
}

impl Default for CsvOptions {
    fn default() -> Self {
        Self {
            delimiter: b',',
            has_header: false,
            orientation: Orientation::VariablesAsRows,
        }
    }
}

/// N variables × T samples, stored as an `N×T` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    values: DMatrix<f64>,
    mean: Option<DVector<f64>>,
    scale: Option<DVector<f64>>,
    variable_names: Option<Vec<String>>,
}

impl DataMatrix {
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        let (n, t) = values.shape();
        if n == 0 || t == 0 {
            return Err(Error::param(format!(
                "data must have at least one variable and one sample, got {n}×{t}"
            )));
        }
        if let Some(idx) = values.iter().position(|v| !v.is_finite()) {
            // Column-major index back to (variable, sample).
            return Err(Error::NonFinite {
                row: idx % n,
                col: idx / n,
            });
        }
        Ok(Self {
            values,
            mean: None,
            scale: None,
            variable_names: None,
        })
    }

    /// Builds a matrix from per-variable rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let t = rows.first().map_or(0, Vec::len);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != t {
                return Err(Error::Ragged {
                    row: i,
                    found: row.len(),
                    expected: t,
                });
            }
        }
        Self::new(DMatrix::from_fn(n, t, |i, j| rows[i][j]))
    }

    pub fn with_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.n_vars() {
            return Err(Error::DimensionMismatch {
                what: "variable names",
                expected: self.n_vars(),
                actual: names.len(),
            });
        }
        self.variable_names = Some(names);
        Ok(self)
    }

    pub fn n_vars(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_samples(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn into_values(self) -> DMatrix<f64> {
        self.values
    }

    pub fn sample(&self, j: usize) -> DVectorView<'_, f64> {
        self.values.column(j)
    }

    /// Per-variable mean removed by [`DataMatrix::center`], if any.
    pub fn mean(&self) -> Option<&DVector<f64>> {
        self.mean.as_ref()
    }

    /// Per-variable standard deviations divided out by [`DataMatrix::standardize`].
    pub fn scale(&self) -> Option<&DVector<f64>> {
        self.scale.as_ref()
    }

    pub fn is_centered(&self) -> bool {
        self.mean.is_some()
    }

    pub fn is_standardized(&self) -> bool {
        self.scale.is_some()
    }

    pub fn variable_names(&self) -> Option<&[String]> {
        self.variable_names.as_deref()
    }

    /// Mean of the data in the coordinates the values live in.
    ///
    /// For centered data this is the removed mean; for standardized data the
    /// coordinates are z-scores, whose mean is zero.
    pub fn coordinate_mean(&self) -> Option<DVector<f64>> {
        match (&self.mean, &self.scale) {
            (_, Some(_)) => Some(DVector::zeros(self.n_vars())),
            (Some(m), None) => Some(m.clone()),
            (None, None) => None,
        }
    }

    pub fn center(&self) -> DataMatrix {
        self.clone().into_centered()
    }

    /// Subtracts the per-variable empirical mean, consuming `self`.
    pub fn into_centered(mut self) -> DataMatrix {
        let (n, t) = self.values.shape();
        let tf = t as f64;
        let mut mean = DVector::zeros(n);
        for i in 0..n {
            let row = self.values.row(i);
            let mut m = row.iter().sum::<f64>() / tf;
            // Second pass removes the rounding left by the first.
            m += row.iter().map(|v| v - m).sum::<f64>() / tf;
            mean[i] = m;
        }
        for j in 0..t {
            let mut col = self.values.column_mut(j);
            col -= &mean;
        }
        self.mean = Some(mean);
        self.scale = None;
        self
    }

    /// Divides each centered row by its divide-by-T standard deviation.
    ///
    /// Uncentered input is centered first. Rows with zero variance are left
    /// unscaled (scale 1) and their indices are returned.
    pub fn standardize(&self) -> (DataMatrix, Vec<usize>) {
        let mut out = if self.is_centered() && !self.is_standardized() {
            self.clone()
        } else {
            self.center()
        };
        let (n, t) = out.values.shape();
        let mean = out.mean.clone().unwrap_or_else(|| DVector::zeros(n));
        let mut scale = DVector::from_element(n, 1.0);
        let mut degenerate = Vec::new();
        for i in 0..n {
            let var = out.values.row(i).iter().map(|v| v * v).sum::<f64>() / t as f64;
            let sd = var.sqrt();
            let floor = 1e-12 * mean[i].abs();
            if sd == 0.0 || sd <= floor {
                degenerate.push(i);
                continue;
            }
            scale[i] = sd;
            out.values.row_mut(i).iter_mut().for_each(|v| *v /= sd);
        }
        out.scale = Some(scale);
        (out, degenerate)
    }

    /// Keeps only the listed sample columns. Centering metadata is dropped
    /// because the subset no longer has zero row sums.
    pub fn select_samples(&self, columns: &[usize]) -> Result<DataMatrix> {
        if columns.is_empty() {
            return Err(Error::param("sample selection is empty"));
        }
        if let Some(&bad) = columns.iter().find(|&&j| j >= self.n_samples()) {
            return Err(Error::param(format!(
                "sample index {bad} out of range for {} samples",
                self.n_samples()
            )));
        }
        Ok(DataMatrix {
            values: self.values.select_columns(columns),
            mean: None,
            scale: None,
            variable_names: self.variable_names.clone(),
        })
    }

    /// Seeded random partition of the samples into train/validation/test.
    ///
    /// Part sizes are `floor(f·T)`; leftover columns go to train, then
    /// validation, then test, one at a time.
    pub fn split(
        &self,
        fractions: (f64, f64, f64),
        seed: u64,
    ) -> Result<(DataMatrix, DataMatrix, DataMatrix)> {
        let sizes = split_sizes(self.n_samples(), fractions)?;
        let mut perm: Vec<usize> = (0..self.n_samples()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        perm.shuffle(&mut rng);
        let (a, rest) = perm.split_at(sizes[0]);
        let (b, c) = rest.split_at(sizes[1]);
        Ok((
            self.select_samples(a)?,
            self.select_samples(b)?,
            self.select_samples(c)?,
        ))
    }

    pub fn transpose_values(&self) -> DMatrix<f64> {
        self.values.transpose()
    }
}

pub(crate) fn split_sizes(total: usize, fractions: (f64, f64, f64)) -> Result<[usize; 3]> {
    let f = [fractions.0, fractions.1, fractions.2];
    if f.iter().any(|v| !v.is_finite() || *v <= 0.0) {
        return Err(Error::param(format!(
            "split fractions must be positive, got {f:?}"
        )));
    }
    if (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::param(format!("split fractions must sum to 1, got {f:?}")));
    }
    if total < 3 {
        return Err(Error::param(format!(
            "need at least 3 samples to split, got {total}"
        )));
    }
    let mut sizes = [0usize; 3];
    for (s, frac) in sizes.iter_mut().zip(f) {
        *s = (frac * total as f64 + 1e-9).floor() as usize;
    }
    let mut left = total - sizes.iter().sum::<usize>();
    let mut k = 0;
    while left > 0 {
        sizes[k % 3] += 1;
        left -= 1;
        k += 1;
    }
    if sizes.iter().any(|&s| s == 0) {
        return Err(Error::param(format!(
            "split of {total} samples with fractions {f:?} leaves an empty part"
        )));
    }
    Ok(sizes)
}

pub fn load_csv(path: impl AsRef<Path>, options: &CsvOptions) -> Result<DataMatrix> {
    let file = std::fs::File::open(path)?;
    read_csv(file, options)
}

/// Parses delimited text into a variable-major [`DataMatrix`].
///
/// With a header and samples-as-rows, the header supplies variable names. With
/// variables-as-rows the header row (sample labels) is skipped.
pub fn read_csv<R: Read>(reader: R, options: &CsvOptions) -> Result<DataMatrix> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(options.delimiter)
        .has_headers(options.has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let names = if options.has_header {
        Some(
            rdr.headers()?
                .iter()
                .map(str::to_owned)
                .collect::<Vec<String>>(),
        )
    } else {
        None
    };

    let line_offset = usize::from(options.has_header);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = None;
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        let row_idx = i + line_offset;
        if record.len() == 1 && record.get(0) == Some("") {
            continue;
        }
        let expected = *width.get_or_insert(record.len());
        if record.len() != expected {
            return Err(Error::Ragged {
                row: row_idx,
                found: record.len(),
                expected,
            });
        }
        let mut row = Vec::with_capacity(record.len());
        for (col, field) in record.iter().enumerate() {
            let v: f64 = field.parse().map_err(|e| Error::Parse {
                row: row_idx,
                col,
                message: format!("{field:?}: {e}"),
            })?;
            if !v.is_finite() {
                return Err(Error::NonFinite { row: row_idx, col });
            }
            row.push(v);
        }
        rows.push(row);
    }

    if let (Some(names), Some(w)) = (&names, width) {
        if names.len() != w {
            return Err(Error::Ragged {
                row: 0,
                found: names.len(),
                expected: w,
            });
        }
    }

    let n_lines = rows.len();
    let n_fields = width.unwrap_or(0);
    if n_lines == 0 || n_fields == 0 {
        return Err(Error::param("input contains no numeric data"));
    }
    let values = match options.orientation {
        Orientation::VariablesAsRows => DMatrix::from_fn(n_lines, n_fields, |i, j| rows[i][j]),
        Orientation::SamplesAsRows => DMatrix::from_fn(n_fields, n_lines, |i, j| rows[j][i]),
    };
    let data = DataMatrix::new(values)?;
    match (options.orientation, names) {
        (Orientation::SamplesAsRows, Some(names)) => data.with_names(names),
        _ => Ok(data),
    }
}

pub fn write_csv(path: impl AsRef<Path>, data: &DataMatrix, options: &CsvOptions) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_csv_to(std::io::BufWriter::new(file), data, options)
}

/// Writes shortest round-trip decimals so a reload is bit-exact.
pub fn write_csv_to<W: Write>(writer: W, data: &DataMatrix, options: &CsvOptions) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .delimiter(options.delimiter)
        .from_writer(writer);
    let v = data.values();
    match options.orientation {
        Orientation::VariablesAsRows => {
            if options.has_header {
                w.write_record((0..v.ncols()).map(|j| format!("s{j}")))?;
            }
            for i in 0..v.nrows() {
                w.write_record(v.row(i).iter().map(|x| format_f64(*x)))?;
            }
        }
        Orientation::SamplesAsRows => {
            if options.has_header {
                let names: Vec<String> = match data.variable_names() {
                    Some(n) => n.to_vec(),
                    None => (0..v.nrows()).map(|i| format!("v{i}")).collect(),
                };
                w.write_record(&names)?;
            }
            for j in 0..v.ncols() {
                w.write_record(v.column(j).iter().map(|x| format_f64(*x)))?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Shortest decimal that parses back to the same `f64`.
pub fn format_f64(x: f64) -> String {
    format!("{x:?}")
}
