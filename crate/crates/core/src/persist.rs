//! JSON model files.
//!
//! ```json
//! {"format_version": 1, "n": 2, "r": 0, "c": 1.0, "orthonormal": true,
//!  "mean": [0.0, 0.0], "diag": [], "basis": [[], []]}
//! ```
//!
//! `basis` holds one row per variable. Floats are written as shortest
//! round-trip decimals, so a save/load cycle is bit-exact. An optional
//! `bounds` object `{"alpha", "beta"}` carries the eigenvalue bracket of
//! fitted models.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::precision::LowRankPrecision;
use crate::spectral::EigenBounds;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub format_version: u32,
    pub n: usize,
    pub r: usize,
    pub c: f64,
    pub orthonormal: bool,
    pub mean: Vec<f64>,
    pub diag: Vec<f64>,
    pub basis: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<EigenBounds>,
}

impl ModelFile {
    pub fn from_model(model: &LowRankPrecision) -> Self {
        let a = model.basis();
        ModelFile {
            format_version: FORMAT_VERSION,
            n: model.n(),
            r: model.rank(),
            c: model.c(),
            orthonormal: model.is_orthonormal(),
            mean: model.mean().iter().copied().collect(),
            diag: model.diag().iter().copied().collect(),
            basis: (0..a.nrows()).map(|i| a.row(i).iter().copied().collect()).collect(),
            bounds: model.bounds(),
        }
    }

    /// Validates the schema and rebuilds the model. Non-orthonormal models are
    /// certified here, so an indefinite file is rejected on load.
    pub fn into_model(self) -> Result<LowRankPrecision> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::InvalidModel(format!(
                "unsupported format_version {} (expected {FORMAT_VERSION})",
                self.format_version
            )));
        }
        let (n, r) = (self.n, self.r);
        if n == 0 {
            return Err(Error::InvalidModel("n must be at least 1".into()));
        }
        let check = |what: &'static str, expected: usize, actual: usize| {
            if expected == actual {
                Ok(())
            } else {
                Err(Error::DimensionMismatch { what, expected, actual })
            }
        };
        check("mean", n, self.mean.len())?;
        check("diag", r, self.diag.len())?;
        check("basis rows", n, self.basis.len())?;
        for row in &self.basis {
            check("basis row width", r, row.len())?;
        }
        if !self.c.is_finite() {
            return Err(Error::InvalidModel("c is not finite".into()));
        }
        let basis = DMatrix::from_fn(n, r, |i, j| self.basis[i][j]);
        let model = LowRankPrecision::new(
            basis,
            DVector::from_vec(self.diag),
            self.c,
            DVector::from_vec(self.mean),
            self.orthonormal,
        )?;
        let model = model.with_bounds(self.bounds.map(|b| EigenBounds::new(b.alpha, b.beta)).transpose()?);
        let model = model.certify()?;
        if let Some(b) = model.bounds() {
            let (lo, hi) = model.spectral_range();
            let tol = 1e-10 * b.beta.max(1.0);
            if lo < b.alpha - tol || hi > b.beta + tol {
                return Err(Error::InvalidModel(format!(
                    "stored bounds [{}, {}] do not contain the spectrum [{lo}, {hi}]",
                    b.alpha, b.beta
                )));
            }
        }
        Ok(model)
    }
}

pub fn to_json_string(model: &LowRankPrecision) -> Result<String> {
    Ok(serde_json::to_string(&ModelFile::from_model(model))?)
}

pub fn write_model<W: Write>(writer: W, model: &LowRankPrecision) -> Result<()> {
    let mut w = BufWriter::new(writer);
    serde_json::to_writer(&mut w, &ModelFile::from_model(model))?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_model<R: Read>(reader: R) -> Result<LowRankPrecision> {
    let file: ModelFile = serde_json::from_reader(BufReader::new(reader))?;
    file.into_model()
}

pub fn save_model(path: impl AsRef<Path>, model: &LowRankPrecision) -> Result<()> {
    write_model(File::create(path)?, model)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<LowRankPrecision> {
    read_model(File::open(path)?)
}
