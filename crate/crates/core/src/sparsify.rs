//! Thresholding the orthonormal factor of a fitted model.
//!
//! Entries of `U` are shrunk (soft) or dropped (hard) at `λ/√(N·r)`. The
//! rebuilt `Ũ·D·Ũᵀ + β·I` stays within `(2λ + λ²)(β − α)` of the dense model
//! in spectral norm.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::precision::{Certification, LowRankPrecision, DENSE_GUARD};

/// Relative slack on `d̃ ≥ −(β − α)`; fitted models reach the bound with equality
/// when `d_t = ‖Σ̂‖₂`.
const LOWER_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThresholdMode {
    Soft,
    Hard,
}

impl fmt::Display for ThresholdMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ThresholdMode::Soft => "soft",
            ThresholdMode::Hard => "hard",
        })
    }
}

impl FromStr for ThresholdMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "soft" => Ok(ThresholdMode::Soft),
            "hard" => Ok(ThresholdMode::Hard),
            other => Err(Error::param(format!("unknown threshold mode '{other}'"))),
        }
    }
}

/// Sparse N×r matrix as coordinate triplets in column-major order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseFactor {
    pub nrows: usize,
    pub ncols: usize,
    pub rows: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
}

impl SparseFactor {
    /// Keeps every entry that is not exactly zero.
    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        Self::from_dense_map(m, |v| v)
    }

    fn from_dense_map(m: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> Self {
        let (nrows, ncols) = m.shape();
        let mut out = SparseFactor {
            nrows,
            ncols,
            rows: Vec::new(),
            cols: Vec::new(),
            vals: Vec::new(),
        };
        for j in 0..ncols {
            for (i, v) in m.column(j).iter().enumerate() {
                let w = f(*v);
                if w != 0.0 {
                    out.rows.push(i);
                    out.cols.push(j);
                    out.vals.push(w);
                }
            }
        }
        out
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// Fraction of nonzero entries; 0 for an empty shape.
    pub fn density(&self) -> f64 {
        let total = self.nrows * self.ncols;
        if total == 0 {
            0.0
        } else {
            self.nnz() as f64 / total as f64
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nrows, self.ncols);
        for k in 0..self.nnz() {
            m[(self.rows[k], self.cols[k])] = self.vals[k];
        }
        m
    }

    /// Checks shape and index consistency, e.g. after deserialization.
    pub fn validate(&self) -> Result<()> {
        let k = self.vals.len();
        if self.rows.len() != k || self.cols.len() != k {
            return Err(Error::InvalidModel("coordinate arrays have different lengths".into()));
        }
        for i in 0..k {
            if self.rows[i] >= self.nrows || self.cols[i] >= self.ncols {
                return Err(Error::InvalidModel(format!("coordinate {i} lies outside the matrix")));
            }
            if !self.vals[i].is_finite() {
                return Err(Error::InvalidModel(format!("coordinate {i} is not finite")));
            }
        }
        Ok(())
    }
}

/// `λ/√(N·r)`, the per-entry threshold for an N×r factor.
pub fn entry_threshold(nrows: usize, ncols: usize, lambda: f64) -> f64 {
    lambda / ((nrows * ncols) as f64).sqrt()
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda.is_finite() && lambda >= 0.0 {
        Ok(())
    } else {
        Err(Error::param(format!("lambda must be a finite non-negative number, got {lambda}")))
    }
}

/// `ũ = sign(u)·max(0, |u| − λ/√(N·r))`.
pub fn soft_threshold_basis(u: &DMatrix<f64>, lambda: f64) -> Result<SparseFactor> {
    check_lambda(lambda)?;
    let tau = entry_threshold(u.nrows(), u.ncols(), lambda);
    Ok(SparseFactor::from_dense_map(u, |v| {
        let shrunk = v.abs() - tau;
        if shrunk > 0.0 {
            v.signum() * shrunk
        } else {
            0.0
        }
    }))
}

/// `ũ = u·1[|u| ≥ λ/√(N·r)]`; the comparison is inclusive.
pub fn hard_threshold_basis(u: &DMatrix<f64>, lambda: f64) -> Result<SparseFactor> {
    check_lambda(lambda)?;
    let tau = entry_threshold(u.nrows(), u.ncols(), lambda);
    Ok(SparseFactor::from_dense_map(u, |v| if v.abs() >= tau { v } else { 0.0 }))
}

pub fn threshold_basis(u: &DMatrix<f64>, lambda: f64, mode: ThresholdMode) -> Result<SparseFactor> {
    match mode {
        ThresholdMode::Soft => soft_threshold_basis(u, lambda),
        ThresholdMode::Hard => hard_threshold_basis(u, lambda),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparsifyReport {
    pub lambda: f64,
    pub mode: ThresholdMode,
    pub basis_density: f64,
    /// Present when N is within the dense guard.
    pub offdiag_density: Option<f64>,
    pub spectral_gap_bound: f64,
    /// `‖Ω̃ − Ω‖₂`, computed exactly in factored form.
    pub measured_spectral_gap: Option<f64>,
    pub kl_bound: Option<f64>,
}

impl SparsifyReport {
    /// Fills in the KL degradation bound from the second moment of the
    /// reference distribution and the measured gap.
    pub fn attach_kl_bound(&mut self, alpha: f64, second_moment_norm: f64) {
        if let Some(gap) = self.measured_spectral_gap {
            self.kl_bound = Some(kl_degradation_bound(alpha, second_moment_norm, gap));
        }
    }
}

/// Thresholds the basis of a fitted model and rebuilds `Ũ·D·Ũᵀ + β·I`.
///
/// Requires an orthonormal model with bounds `(α, β)`, `c = β` and
/// `d̃ ∈ [−(β − α), 0]`, which is what a Riccati or Tikhonov fit produces.
/// Soft thresholding keeps the input bracket. Hard thresholding does not
/// guarantee it in general, so the hard-mode model is certified numerically
/// and carries its actual eigenvalue range as bounds.
pub fn sparsify_model(
    model: &LowRankPrecision,
    lambda: f64,
    mode: ThresholdMode,
) -> Result<(LowRankPrecision, SparseFactor, SparsifyReport)> {
    check_lambda(lambda)?;
    if !model.is_orthonormal() {
        return Err(Error::param("sparsify needs an orthonormal model"));
    }
    let bounds = model
        .bounds()
        .ok_or_else(|| Error::param("sparsify needs a model with eigenvalue bounds"))?;
    let (alpha, beta) = (bounds.alpha, bounds.beta);
    if (model.c() - beta).abs() > 1e-12 * beta {
        return Err(Error::param(format!(
            "sparsify needs c = β, got c = {} and β = {beta}",
            model.c()
        )));
    }
    let floor = -(beta - alpha) * (1.0 + LOWER_SLACK) - LOWER_SLACK * beta;
    for (t, d) in model.diag().iter().enumerate() {
        if *d > 0.0 {
            return Err(Error::param(format!("diag entry {t} is positive ({d})")));
        }
        if *d < floor {
            return Err(Error::param(format!(
                "diag entry {t} = {d} lies below −(β − α) = {}",
                -(beta - alpha)
            )));
        }
    }

    let factor = threshold_basis(model.basis(), lambda, mode)?;
    let u_tilde = factor.to_dense();
    let n = model.n();

    let gap = measured_gap(model.basis(), &u_tilde, model.diag());

    let (model_bounds, certification) = match mode {
        ThresholdMode::Soft => (Some(bounds), Certification::Analytic),
        ThresholdMode::Hard => (None, Certification::Unverified),
    };
    let sparse = LowRankPrecision::from_parts(
        Arc::new(u_tilde),
        model.diag().clone(),
        beta,
        Arc::clone(model.shared_mean()),
        false,
        model_bounds,
        certification,
    )
    .certify()?;

    let offdiag = if n <= DENSE_GUARD {
        Some(offdiag_density(&sparse.materialize_dense()?))
    } else {
        None
    };
    let report = SparsifyReport {
        lambda,
        mode,
        basis_density: factor.density(),
        offdiag_density: offdiag,
        spectral_gap_bound: (2.0 * lambda + lambda * lambda) * (beta - alpha),
        measured_spectral_gap: Some(gap),
        kl_bound: None,
    };
    Ok((sparse, factor, report))
}

/// `‖Ũ·D·Ũᵀ − U·D·Uᵀ‖₂` through the spectrum of `[Ũ U]·diag(D, −D)·[Ũ U]ᵀ`.
fn measured_gap(u: &DMatrix<f64>, u_tilde: &DMatrix<f64>, diag: &DVector<f64>) -> f64 {
    let (n, r) = u.shape();
    if r == 0 {
        return 0.0;
    }
    let mut joint = DMatrix::zeros(n, 2 * r);
    joint.columns_mut(0, r).copy_from(u_tilde);
    joint.columns_mut(r, r).copy_from(u);
    let mut d = DVector::zeros(2 * r);
    for t in 0..r {
        d[t] = diag[t];
        d[r + t] = -diag[t];
    }
    linalg::low_rank_eigenvalues(&joint, &d)
        .into_iter()
        .fold(0.0_f64, |a, v| a.max(v.abs()))
}

/// `(1/α + ‖E_P[(x−μ)(x−μ)ᵀ]‖₂)·‖Ω̃ − Ω‖₂`, for `α > 0`.
pub fn kl_degradation_bound(alpha: f64, second_moment_spec_norm: f64, spectral_gap: f64) -> f64 {
    (1.0 / alpha + second_moment_spec_norm) * spectral_gap
}

/// `1 − (1 − p²)^t`: expected off-diagonal density of `A·D·Aᵀ + c·I` when
/// the N×t factor has independent entries that are nonzero with probability p.
pub fn expected_offdiag_density(p: f64, t: usize) -> f64 {
    1.0 - (1.0 - p * p).powi(t as i32)
}

/// Fraction of exactly nonzero off-diagonal entries.
pub fn offdiag_density(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    if n < 2 {
        return 0.0;
    }
    let mut count = 0usize;
    for j in 0..n {
        for i in 0..n {
            if i != j && m[(i, j)] != 0.0 {
                count += 1;
            }
        }
    }
    count as f64 / (n * (n - 1)) as f64
}

/// Fraction of exactly nonzero entries of a dense matrix.
pub fn matrix_density(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.iter().filter(|v| **v != 0.0).count() as f64 / m.len() as f64
}

/// Sample mean and standard error of the off-diagonal density over random
/// factors with entry density `p`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub expected: f64,
}

/// One draw: `A` (N×t) with entries nonzero w.p. `p` and normal values,
/// `d ~ U[0.5, 1.5]`, `c = 1`; returns the off-diagonal density of `A·D·Aᵀ + I`.
pub fn density_trial(n: usize, t: usize, p: f64, rng: &mut ChaCha8Rng) -> f64 {
    let a = DMatrix::from_fn(n, t, |_, _| {
        if rng.random_bool(p) {
            rng.sample::<f64, _>(StandardNormal)
        } else {
            0.0
        }
    });
    let d = DVector::from_fn(t, |_, _| rng.random_range(0.5..1.5));
    let mut b = &a * DMatrix::from_diagonal(&d) * a.transpose();
    for i in 0..n {
        b[(i, i)] += 1.0;
    }
    offdiag_density(&b)
}

/// Runs `trials` independent [`density_trial`]s; trial `i` uses stream `i`
/// of a generator seeded with `seed`, so the result does not depend on the
/// thread count.
pub fn monte_carlo_density(n: usize, t: usize, p: f64, trials: usize, seed: u64) -> Result<DensityEstimate> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::param(format!("p must lie in [0, 1], got {p}")));
    }
    if trials < 2 || n < 2 || t == 0 {
        return Err(Error::param("need n >= 2, t >= 1 and at least two trials"));
    }
    let values: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            density_trial(n, t, p, &mut rng)
        })
        .collect();
    let m = values.len() as f64;
    let mean = values.iter().sum::<f64>() / m;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0);
    Ok(DensityEstimate {
        mean,
        std_error: (var / m).sqrt(),
        expected: expected_offdiag_density(p, t),
    })
}

/// A very sparse factor whose product is dense: `a_{n1} = 1`, zero elsewhere,
/// so `A·Aᵀ = 11ᵀ`.
pub fn sparse_factor_dense_product(n: usize, t: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let mut a = DMatrix::zeros(n, t);
    a.column_mut(0).fill(1.0);
    let b = &a * a.transpose();
    (a, b)
}

/// A very sparse arrow matrix (`b_{n1} = b_{1n} = 1`, `b_{nn} = N`) whose
/// Cholesky factor is dense below the diagonal.
pub fn dense_factor_sparse_product(n: usize) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let mut b = DMatrix::zeros(n, n);
    for i in 0..n {
        b[(i, i)] = n as f64;
        if i > 0 {
            b[(i, 0)] = 1.0;
            b[(0, i)] = 1.0;
        }
    }
    let chol = b
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Indefinite("arrow matrix is not positive definite".into()))?;
    Ok((chol.l(), b))
}
