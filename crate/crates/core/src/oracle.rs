//! Dense reference implementations for small N.
//!
//! These materialize N×N matrices on purpose and exist only to check the
//! factored routines. None of them is called from the fast path.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_positive, Error, Result};

/// Largest dimension the oracles accept.
pub const ORACLE_MAX_N: usize = 2000;

const SYMMETRY_TOL: f64 = 1e-12;

/// A dense Gaussian. Whether `matrix` is a covariance or a precision is set
/// by the function it is passed to.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseGaussian {
    pub mean: DVector<f64>,
    pub matrix: DMatrix<f64>,
}

impl DenseGaussian {
    pub fn new(mean: DVector<f64>, matrix: DMatrix<f64>) -> Result<Self> {
        check_square(&matrix)?;
        if mean.len() != matrix.nrows() {
            return Err(Error::DimensionMismatch {
                what: "mean",
                expected: matrix.nrows(),
                actual: mean.len(),
            });
        }
        check_symmetric(&matrix)?;
        Ok(Self { mean, matrix })
    }

    pub fn zero_mean(matrix: DMatrix<f64>) -> Result<Self> {
        let n = matrix.nrows();
        Self::new(DVector::zeros(n), matrix)
    }

    pub fn n(&self) -> usize {
        self.matrix.nrows()
    }
}

fn check_square(m: &DMatrix<f64>) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch {
            what: "square matrix columns",
            expected: m.nrows(),
            actual: m.ncols(),
        });
    }
    if m.nrows() > ORACLE_MAX_N {
        return Err(Error::DenseGuard {
            n: m.nrows(),
            guard: ORACLE_MAX_N,
        });
    }
    Ok(())
}

fn check_symmetric(m: &DMatrix<f64>) -> Result<()> {
    let scale = m.amax().max(1.0);
    for i in 0..m.nrows() {
        for j in 0..i {
            if (m[(i, j)] - m[(j, i)]).abs() > SYMMETRY_TOL * scale {
                return Err(Error::InvalidModel(format!("matrix is not symmetric at ({i}, {j})")));
            }
        }
    }
    Ok(())
}

fn symmetrized(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Sorted eigenvalues (ascending) of a symmetric matrix.
pub fn eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = symmetrized(m).symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// `‖M‖₂` for a symmetric matrix.
pub fn symmetric_spectral_norm(m: &DMatrix<f64>) -> f64 {
    eigenvalues(m).iter().fold(0.0_f64, |a, v| a.max(v.abs()))
}

/// `(1/T)·X·Xᵀ` of already-centered N×T data.
pub fn sample_covariance(x: &DMatrix<f64>) -> DMatrix<f64> {
    let t = x.ncols().max(1) as f64;
    symmetrized(&(x * x.transpose() / t))
}

fn spectral_map(cov: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let eig = symmetrized(cov).symmetric_eigen();
    let mapped = eig.eigenvalues.map(f);
    let q = &eig.eigenvectors;
    symmetrized(&(q * DMatrix::from_diagonal(&mapped) * q.transpose()))
}

fn check_psd(cov: &DMatrix<f64>) -> Result<()> {
    let ev = eigenvalues(cov);
    let scale = ev.iter().fold(1.0_f64, |a, v| a.max(v.abs()));
    if let Some(min) = ev.first() {
        if *min < -1e-10 * scale {
            return Err(Error::Indefinite(format!("covariance has eigenvalue {min:e}")));
        }
    }
    Ok(())
}

/// Solves `Ω⁻¹ − Σ̂ − ρΩ = 0` per eigenvalue: `x(λ) = (−λ + √(λ² + 4ρ))/(2ρ)`.
pub fn dense_riccati(cov: &DMatrix<f64>, rho: f64) -> Result<DMatrix<f64>> {
    check_positive("rho", rho)?;
    check_square(cov)?;
    check_symmetric(cov)?;
    check_psd(cov)?;
    // Eigenvalues that are slightly negative from roundoff are clamped.
    Ok(spectral_map(cov, |l| {
        let l = l.max(0.0);
        (-l + (l * l + 4.0 * rho).sqrt()) / (2.0 * rho)
    }))
}

/// `(Σ̂ + ρI)⁻¹` through a Cholesky factorization.
pub fn dense_tikhonov(cov: &DMatrix<f64>, rho: f64) -> Result<DMatrix<f64>> {
    check_positive("rho", rho)?;
    check_square(cov)?;
    check_symmetric(cov)?;
    let n = cov.nrows();
    let shifted = cov + DMatrix::identity(n, n) * rho;
    let chol = shifted
        .cholesky()
        .ok_or_else(|| Error::Indefinite("Σ̂ + ρI is not positive definite".into()))?;
    Ok(symmetrized(&chol.inverse()))
}

fn cholesky_log_det(m: &DMatrix<f64>) -> Result<(f64, nalgebra::Cholesky<f64, nalgebra::Dyn>)> {
    let chol = m
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Indefinite("matrix is not positive definite".into()))?;
    let l = chol.l_dirty();
    let log_det = 2.0 * (0..m.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>();
    Ok((log_det, chol))
}

/// `log det Ω − (x − μ)ᵀ Ω (x − μ)` with `gauss.matrix = Ω`.
pub fn dense_loglik(gauss: &DenseGaussian, x: &DVector<f64>) -> Result<f64> {
    if x.len() != gauss.n() {
        return Err(Error::DimensionMismatch {
            what: "sample",
            expected: gauss.n(),
            actual: x.len(),
        });
    }
    let (log_det, _) = cholesky_log_det(&gauss.matrix)?;
    let r = x - &gauss.mean;
    Ok(log_det - r.dot(&(&gauss.matrix * &r)))
}

/// Conditional of block 1 given block 2 for a precision-parameterized Gaussian.
pub fn dense_conditional(
    gauss: &DenseGaussian,
    part1: &[usize],
    part2: &[usize],
    x2: &DVector<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let omega = &gauss.matrix;
    let p11 = omega.select_rows(part1).select_columns(part1);
    let p12 = omega.select_rows(part1).select_columns(part2);
    let mu1 = DVector::from_iterator(part1.len(), part1.iter().map(|&i| gauss.mean[i]));
    let mu2 = DVector::from_iterator(part2.len(), part2.iter().map(|&i| gauss.mean[i]));
    if x2.len() != part2.len() {
        return Err(Error::DimensionMismatch {
            what: "observed values",
            expected: part2.len(),
            actual: x2.len(),
        });
    }
    let (_, chol) = cholesky_log_det(&p11)?;
    let shift = chol.solve(&(&p12 * (x2 - mu2)));
    Ok((mu1 - shift, p11))
}

/// `KL(P‖Q)` with `p.matrix = Σ_P` and `q.matrix = Ω_Q`, including the mean term.
pub fn dense_kl(p: &DenseGaussian, q: &DenseGaussian) -> Result<f64> {
    if p.n() != q.n() {
        return Err(Error::DimensionMismatch {
            what: "distribution dimension",
            expected: p.n(),
            actual: q.n(),
        });
    }
    let n = p.n() as f64;
    let (logdet_sigma, _) = cholesky_log_det(&p.matrix)?;
    let (logdet_omega, _) = cholesky_log_det(&q.matrix)?;
    let trace = (&q.matrix * &p.matrix).trace();
    let dm = &q.mean - &p.mean;
    let mean_term = dm.dot(&(&q.matrix * &dm));
    Ok(0.5 * (trace - n - logdet_sigma - logdet_omega + mean_term))
}

/// `‖Ω⁻¹ − Σ̂ − ρΩ‖_max`.
pub fn kkt_residual(omega: &DMatrix<f64>, cov: &DMatrix<f64>, rho: f64) -> Result<f64> {
    check_square(omega)?;
    let (_, chol) = cholesky_log_det(&symmetrized(omega))?;
    let resid = chol.inverse() - cov - omega * rho;
    Ok(resid.amax())
}
