//! Closed-form spectral estimators.
//!
//! Both regularized maximum-likelihood problems share the eigenvectors of the
//! sample covariance, so one thin SVD of the centered data answers every ρ:
//!
//! * Riccati (`max log det Ω − ⟨Σ̂, Ω⟩ − ρ/2 ‖Ω‖²_F`): each covariance eigenvalue
//!   `d` maps to the positive root of `ρλ² + dλ − 1 = 0`, and directions outside
//!   the data span get `1/√ρ`.
//! * Tikhonov (`max log det Ω − ⟨Σ̂, Ω⟩ − ρ tr Ω`): `λ = 1/(d + ρ)`, and `1/ρ`
//!   off the span.
//!
//! Models come out as `U·diag(λ − c)·Uᵀ + c·I` sharing the basis `U`.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataset::DataMatrix;
use crate::error::{check_positive, Error, Result};
use crate::linalg;
use crate::precision::{Certification, LowRankPrecision};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Riccati,
    Tikhonov,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Riccati => "riccati",
            Method::Tikhonov => "tikhonov",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "riccati" => Ok(Method::Riccati),
            "tikhonov" => Ok(Method::Tikhonov),
            other => Err(Error::param(format!("unknown method {other:?}"))),
        }
    }
}

/// Bracket `α·I ⪯ Ω ⪯ β·I` on a model's spectrum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EigenBounds {
    pub alpha: f64,
    pub beta: f64,
}

impl EigenBounds {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha <= beta && beta.is_finite()) {
            return Err(Error::param(format!(
                "eigenvalue bounds need 0 < alpha <= beta, got [{alpha}, {beta}]"
            )));
        }
        Ok(Self { alpha, beta })
    }

    pub fn contains(&self, value: f64, tol: f64) -> bool {
        value >= self.alpha - tol && value <= self.beta + tol
    }
}

/// Thin SVD of centered data: the only thing the estimators need.
#[derive(Debug, Clone)]
pub struct SpectralBasis {
    basis_u: Arc<DMatrix<f64>>,
    data_singvals: DVector<f64>,
    cov_eigvals: DVector<f64>,
    n_samples: usize,
    mean: Arc<DVector<f64>>,
}

impl SpectralBasis {
    /// N×r orthonormal basis of the data span.
    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis_u
    }

    pub fn shared_basis(&self) -> &Arc<DMatrix<f64>> {
        &self.basis_u
    }

    pub fn data_singular_values(&self) -> &DVector<f64> {
        &self.data_singvals
    }

    /// `d_t = s_t² / T`, the nonzero eigenvalues of `Σ̂`.
    pub fn cov_eigenvalues(&self) -> &DVector<f64> {
        &self.cov_eigvals
    }

    pub fn rank(&self) -> usize {
        self.cov_eigvals.len()
    }

    pub fn n_vars(&self) -> usize {
        self.basis_u.nrows()
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn shared_mean(&self) -> &Arc<DVector<f64>> {
        &self.mean
    }

    /// `‖Σ̂‖₂`, zero for rank-0 data.
    pub fn cov_spectral_norm(&self) -> f64 {
        self.cov_eigvals.iter().copied().fold(0.0, f64::max)
    }
}

/// Thin SVD of centered data in O(N·T²) time and O(N·T) memory.
///
/// Only the left singular vectors and the spectrum are kept; `V` is dropped.
pub fn thin_svd(data: &DataMatrix) -> Result<SpectralBasis> {
    let mean = data
        .coordinate_mean()
        .ok_or_else(|| Error::param("thin_svd needs centered data (call center first)"))?;
    Ok(basis_from_values(data.values().clone(), mean))
}

/// Like [`thin_svd`], but consumes the data so its buffer is reused by the
/// factorization instead of copied.
pub fn thin_svd_owned(data: DataMatrix) -> Result<SpectralBasis> {
    let mean = data
        .coordinate_mean()
        .ok_or_else(|| Error::param("thin_svd needs centered data (call center first)"))?;
    Ok(basis_from_values(data.into_values(), mean))
}

fn basis_from_values(values: DMatrix<f64>, mean: DVector<f64>) -> SpectralBasis {
    let t = values.ncols();
    let svd = linalg::thin_svd(values);
    let cov = svd.singular_values.map(|s| s * s / t as f64);
    SpectralBasis {
        basis_u: Arc::new(svd.u),
        data_singvals: svd.singular_values,
        cov_eigvals: cov,
        n_samples: t,
        mean: Arc::new(mean),
    }
}

/// Riccati eigenvalue for covariance eigenvalue `d`:
/// `2 / (d + √(d² + 4ρ))`, the cancellation-free root of `ρλ² + dλ − 1 = 0`.
pub fn riccati_eigenvalue(d: f64, rho: f64) -> f64 {
    2.0 / (d + (d * d + 4.0 * rho).sqrt())
}

/// The textbook form `√(1/ρ + d²/4ρ²) − d/2ρ − 1/√ρ`; loses digits for d ≫ ρ.
pub fn riccati_diag_naive(d: f64, rho: f64) -> f64 {
    (1.0 / rho + d * d / (4.0 * rho * rho)).sqrt() - d / (2.0 * rho) - 1.0 / rho.sqrt()
}

pub fn tikhonov_eigenvalue(d: f64, rho: f64) -> f64 {
    1.0 / (d + rho)
}

/// `(c, d̃)` for one ρ: the isotropic level and the per-direction offsets.
fn spectral_parameters(method: Method, cov: &DVector<f64>, rho: f64) -> (f64, DVector<f64>) {
    match method {
        Method::Riccati => {
            let c = 1.0 / rho.sqrt();
            (c, cov.map(|d| riccati_eigenvalue(d, rho) - c))
        }
        Method::Tikhonov => {
            let c = 1.0 / rho;
            (c, cov.map(|d| -d / (rho * (d + rho))))
        }
    }
}

pub fn eigen_bounds(spec_norm_cov: f64, rho: f64, method: Method) -> Result<EigenBounds> {
    check_positive("rho", rho)?;
    if !(spec_norm_cov >= 0.0 && spec_norm_cov.is_finite()) {
        return Err(Error::param(format!(
            "covariance spectral norm must be nonnegative, got {spec_norm_cov}"
        )));
    }
    Ok(match method {
        Method::Riccati => EigenBounds {
            alpha: riccati_eigenvalue(spec_norm_cov, rho),
            beta: 1.0 / rho.sqrt(),
        },
        Method::Tikhonov => EigenBounds {
            alpha: tikhonov_eigenvalue(spec_norm_cov, rho),
            beta: 1.0 / rho,
        },
    })
}

fn build_model(basis: &SpectralBasis, method: Method, rho: f64, c: f64, diag: DVector<f64>) -> LowRankPrecision {
    let bounds = eigen_bounds(basis.cov_spectral_norm(), rho, method).expect("rho validated");
    LowRankPrecision::from_parts(
        Arc::clone(&basis.basis_u),
        diag,
        c,
        Arc::clone(&basis.mean),
        true,
        Some(bounds),
        Certification::Analytic,
    )
}

pub fn fit(basis: &SpectralBasis, rho: f64, method: Method) -> Result<LowRankPrecision> {
    check_positive("rho", rho)?;
    let (c, diag) = spectral_parameters(method, &basis.cov_eigvals, rho);
    Ok(build_model(basis, method, rho, c, diag))
}

pub fn riccati_fit(basis: &SpectralBasis, rho: f64) -> Result<LowRankPrecision> {
    fit(basis, rho, Method::Riccati)
}

pub fn tikhonov_fit(basis: &SpectralBasis, rho: f64) -> Result<LowRankPrecision> {
    fit(basis, rho, Method::Tikhonov)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathEntry {
    pub rho: f64,
    pub c: f64,
    pub diag: DVector<f64>,
}

/// Fitted models over a grid of ρ, all sharing one [`SpectralBasis`].
#[derive(Debug, Clone)]
pub struct RegularizationPath {
    basis: SpectralBasis,
    method: Method,
    entries: Vec<PathEntry>,
}

impl RegularizationPath {
    pub fn method(&self) -> Method {
        self.method
    }

    pub fn basis(&self) -> &SpectralBasis {
        &self.basis
    }

    pub fn entries(&self) -> &[PathEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn rhos(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.rho).collect()
    }

    /// Model for entry `i`; O(r), the basis and mean are shared.
    pub fn model(&self, i: usize) -> LowRankPrecision {
        let e = &self.entries[i];
        build_model(&self.basis, self.method, e.rho, e.c, e.diag.clone())
    }

    pub fn bounds(&self, i: usize) -> EigenBounds {
        eigen_bounds(self.basis.cov_spectral_norm(), self.entries[i].rho, self.method)
            .expect("rho validated")
    }
}

/// One SVD, then O(r) per grid point.
pub fn solution_path(basis: &SpectralBasis, rhos: &[f64], method: Method) -> Result<RegularizationPath> {
    if rhos.is_empty() {
        return Err(Error::param("rho grid is empty"));
    }
    let mut entries = Vec::with_capacity(rhos.len());
    for &rho in rhos {
        check_positive("rho", rho)?;
        let (c, diag) = spectral_parameters(method, &basis.cov_eigvals, rho);
        entries.push(PathEntry { rho, c, diag });
    }
    Ok(RegularizationPath {
        basis: basis.clone(),
        method,
        entries,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationResult {
    pub best_index: usize,
    pub best_rho: f64,
    /// `(ρ, average held-out log-likelihood)` in grid order.
    pub scores: Vec<(f64, f64)>,
}

/// Picks the ρ with the highest average validation log-likelihood.
///
/// `val` holds raw samples in the training coordinates; the training mean
/// stored in the basis is subtracted here. The projection `Uᵀ(X − μ)` is
/// computed once, so each grid point costs O(r·T_val). Ties go to the larger ρ.
pub fn select_rho_by_validation(path: &RegularizationPath, val: &DataMatrix) -> Result<ValidationResult> {
    let basis = path.basis();
    let n = basis.n_vars();
    if val.n_vars() != n {
        return Err(Error::DimensionMismatch {
            what: "validation variables",
            expected: n,
            actual: val.n_vars(),
        });
    }
    let mut resid = val.values().clone();
    for mut col in resid.column_iter_mut() {
        col -= basis.mean();
    }
    let proj = basis.basis().tr_mul(&resid);
    let sq_norms: Vec<f64> = resid.column_iter().map(|c| c.norm_squared()).collect();
    let tv = val.n_samples() as f64;
    let nf = n as f64;

    let mut scores = Vec::with_capacity(path.len());
    for e in path.entries() {
        // Orthonormal basis: log det(I + D̃/c) + N log c.
        let logdet: f64 = e.diag.iter().map(|d| (1.0 + d / e.c).ln()).sum::<f64>() + nf * e.c.ln();
        let mut quad = 0.0;
        for (j, sq) in sq_norms.iter().enumerate() {
            let low: f64 = proj
                .column(j)
                .iter()
                .zip(e.diag.iter())
                .map(|(p, d)| d * p * p)
                .sum();
            quad += low + e.c * sq;
        }
        scores.push((e.rho, logdet - quad / tv));
    }

    let mut best = 0;
    for (i, &(rho, score)) in scores.iter().enumerate().skip(1) {
        let (best_rho, best_score) = scores[best];
        if score > best_score || (score == best_score && rho > best_rho) {
            best = i;
        }
    }
    Ok(ValidationResult {
        best_index: best,
        best_rho: scores[best].0,
        scores,
    })
}

/// Grid spec `"lo:hi:log|lin:count"`.
pub fn parse_rho_grid(spec: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    let bad = || Error::param(format!("rho grid {spec:?} is not of the form lo:hi:log|lin:count"));
    if parts.len() != 4 {
        return Err(bad());
    }
    let lo: f64 = parts[0].trim().parse().map_err(|_| bad())?;
    let hi: f64 = parts[1].trim().parse().map_err(|_| bad())?;
    let count: usize = parts[3].trim().parse().map_err(|_| bad())?;
    check_positive("grid lower end", lo)?;
    check_positive("grid upper end", hi)?;
    if count == 0 || hi < lo {
        return Err(bad());
    }
    let log = match parts[2].trim() {
        "log" => true,
        "lin" => false,
        _ => return Err(bad()),
    };
    Ok(grid(lo, hi, count, log))
}

pub fn grid(lo: f64, hi: f64, count: usize, log: bool) -> Vec<f64> {
    if count == 1 {
        return vec![lo];
    }
    let steps = (count - 1) as f64;
    (0..count)
        .map(|i| {
            let f = i as f64 / steps;
            if log {
                (lo.ln() + f * (hi.ln() - lo.ln())).exp()
            } else {
                lo + f * (hi - lo)
            }
        })
        .collect()
}

/// 20 log-spaced points on [1e-3, 1e1].
pub fn default_rho_grid() -> Vec<f64> {
    grid(1e-3, 1e1, 20, true)
}
