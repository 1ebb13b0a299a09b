//! Factored precision matrices `Ω = A·diag(d)·Aᵀ + c·I`.
//!
//! Every query here runs in O(N·r) or O(N·r²) and never forms Ω, except
//! [`LowRankPrecision::materialize_dense`], which exists for small-N checks.

use std::io::Write;
use std::sync::{Arc, OnceLock};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::spectral::EigenBounds;

/// Default size limit for [`LowRankPrecision::materialize_dense`].
pub const DENSE_GUARD: usize = 2000;

/// Tolerance on `‖AᵀA − I‖_max` for a basis flagged orthonormal.
pub const ORTHONORMAL_TOL: f64 = 1e-8;

/// How positive definiteness of a model is known.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Certification {
    /// Follows from the construction (closed-form fits, sub-blocks of PD models).
    Analytic,
    /// Checked numerically against the factored spectrum.
    Verified,
    /// Not established; PD-dependent operations refuse the model.
    Unverified,
}

#[derive(Debug, Clone)]
pub struct LowRankPrecision {
    basis: Arc<DMatrix<f64>>,
    diag: DVector<f64>,
    c: f64,
    mean: Arc<DVector<f64>>,
    orthonormal: bool,
    bounds: Option<EigenBounds>,
    certification: Certification,
    log_det: OnceLock<f64>,
}

impl PartialEq for LowRankPrecision {
    fn eq(&self, other: &Self) -> bool {
        self.basis == other.basis
            && self.diag == other.diag
            && self.c == other.c
            && self.mean == other.mean
            && self.orthonormal == other.orthonormal
            && self.bounds == other.bounds
    }
}

/// Result of [`LowRankPrecision::screen_unimportant`].
#[derive(Debug, Clone, PartialEq)]
pub struct Screening {
    /// Indices `n` with `q(n) ≤ ε`, ascending.
    pub unimportant: Vec<usize>,
    /// The per-variable upper bound on every partial correlation involving `n`.
    pub q: DVector<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub n1: usize,
    pub n2: usize,
    pub partial_correlation: f64,
}

impl LowRankPrecision {
    /// Hand-built model. Orthonormal models are checked for `‖AᵀA − I‖_max ≤ 1e-8`
    /// and certified PD here (`c > 0`, `d_t + c > 0`); other models start
    /// [`Certification::Unverified`] until [`LowRankPrecision::certify`] is called.
    pub fn new(
        basis: DMatrix<f64>,
        diag: DVector<f64>,
        c: f64,
        mean: DVector<f64>,
        orthonormal: bool,
    ) -> Result<Self> {
        let n = basis.nrows();
        let r = basis.ncols();
        if n == 0 {
            return Err(Error::InvalidModel("model needs at least one variable".into()));
        }
        if r > n {
            return Err(Error::InvalidModel(format!("rank {r} exceeds dimension {n}")));
        }
        if diag.len() != r {
            return Err(Error::DimensionMismatch {
                what: "diagonal",
                expected: r,
                actual: diag.len(),
            });
        }
        if mean.len() != n {
            return Err(Error::DimensionMismatch {
                what: "mean",
                expected: n,
                actual: mean.len(),
            });
        }
        let finite = basis.iter().chain(diag.iter()).chain(mean.iter()).all(|v| v.is_finite());
        if !finite || !c.is_finite() {
            return Err(Error::InvalidModel("model contains non-finite entries".into()));
        }
        let certification = if orthonormal {
            let err = linalg::orthonormality_error(&basis);
            if err > ORTHONORMAL_TOL {
                return Err(Error::InvalidModel(format!(
                    "basis flagged orthonormal but ‖AᵀA − I‖_max = {err:e}"
                )));
            }
            if c <= 0.0 {
                return Err(Error::Indefinite(format!("isotropic level c = {c} must be positive")));
            }
            if let Some(t) = diag.iter().position(|d| d + c <= 0.0) {
                return Err(Error::Indefinite(format!(
                    "eigenvalue d[{t}] + c = {} is not positive",
                    diag[t] + c
                )));
            }
            Certification::Verified
        } else {
            Certification::Unverified
        };
        Ok(Self::from_parts(
            Arc::new(basis),
            diag,
            c,
            Arc::new(mean),
            orthonormal,
            None,
            certification,
        ))
    }

    /// `c·I` with the given mean.
    pub fn isotropic(c: f64, mean: DVector<f64>) -> Result<Self> {
        let n = mean.len();
        Self::new(DMatrix::zeros(n, 0), DVector::zeros(0), c, mean, true)
    }

    pub(crate) fn from_parts(
        basis: Arc<DMatrix<f64>>,
        diag: DVector<f64>,
        c: f64,
        mean: Arc<DVector<f64>>,
        orthonormal: bool,
        bounds: Option<EigenBounds>,
        certification: Certification,
    ) -> Self {
        debug_assert_eq!(basis.ncols(), diag.len());
        debug_assert_eq!(basis.nrows(), mean.len());
        Self {
            basis,
            diag,
            c,
            mean,
            orthonormal,
            bounds,
            certification,
            log_det: OnceLock::new(),
        }
    }

    pub fn n(&self) -> usize {
        self.basis.nrows()
    }

    pub fn rank(&self) -> usize {
        self.diag.len()
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn shared_basis(&self) -> &Arc<DMatrix<f64>> {
        &self.basis
    }

    pub fn diag(&self) -> &DVector<f64> {
        &self.diag
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn shared_mean(&self) -> &Arc<DVector<f64>> {
        &self.mean
    }

    pub fn is_orthonormal(&self) -> bool {
        self.orthonormal
    }

    pub fn bounds(&self) -> Option<EigenBounds> {
        self.bounds
    }

    pub fn certification(&self) -> Certification {
        self.certification
    }

    pub fn with_mean(mut self, mean: DVector<f64>) -> Result<Self> {
        if mean.len() != self.n() {
            return Err(Error::DimensionMismatch {
                what: "mean",
                expected: self.n(),
                actual: mean.len(),
            });
        }
        self.mean = Arc::new(mean);
        Ok(self)
    }

    pub(crate) fn with_bounds(mut self, bounds: Option<EigenBounds>) -> Self {
        self.bounds = bounds;
        self
    }

    pub(crate) fn require_pd(&self) -> Result<()> {
        match self.certification {
            Certification::Unverified => Err(Error::Indefinite(
                "positive definiteness of this model is unverified; call certify()".into(),
            )),
            _ => Ok(()),
        }
    }

    /// Eigenvalues of Ω: the low-rank part shifted by `c`, plus `c` with the
    /// returned multiplicity for the directions outside the basis span.
    pub fn spectrum(&self) -> (Vec<f64>, usize) {
        let n = self.n();
        let low: Vec<f64> = if self.orthonormal {
            let mut v: Vec<f64> = self.diag.iter().copied().collect();
            v.sort_by(f64::total_cmp);
            v
        } else {
            linalg::low_rank_eigenvalues(&self.basis, &self.diag)
        };
        let extra = n - low.len();
        (low.into_iter().map(|v| v + self.c).collect(), extra)
    }

    /// Exact `[λ_min, λ_max]` from the factored spectrum.
    pub fn spectral_range(&self) -> (f64, f64) {
        let (low, extra) = self.spectrum();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for v in low.iter().copied().chain((extra > 0).then_some(self.c)) {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        (lo, hi)
    }

    /// Numerically certifies positive definiteness from the factored spectrum
    /// (O(N·r²)) and records the exact eigenvalue range as bounds if none are set.
    pub fn certify(mut self) -> Result<Self> {
        if self.certification != Certification::Unverified {
            return Ok(self);
        }
        let (lo, hi) = self.spectral_range();
        if !(lo > 0.0) {
            return Err(Error::Indefinite(format!("smallest eigenvalue is {lo:e}")));
        }
        if self.c <= 0.0 {
            return Err(Error::Indefinite(format!("isotropic level c = {} must be positive", self.c)));
        }
        if self.bounds.is_none() {
            self.bounds = Some(EigenBounds { alpha: lo, beta: hi });
        }
        self.certification = Certification::Verified;
        Ok(self)
    }

    /// Equivalent model on an orthonormal basis: the thin SVD of
    /// `A·(−D)^{1/2} = U·Ŝ·Vᵀ` gives `A·D·Aᵀ = −U·Ŝ²·Uᵀ`.
    ///
    /// Only negative semidefinite low-rank parts are supported; zero entries
    /// are dropped first.
    pub fn orthonormalize(&self) -> Result<Self> {
        if let Some(t) = self.diag.iter().position(|d| *d > 0.0) {
            return Err(Error::param(format!(
                "orthonormalize needs diag <= 0, entry {t} is {}",
                self.diag[t]
            )));
        }
        let keep: Vec<usize> = (0..self.rank()).filter(|&t| self.diag[t] < 0.0).collect();
        let n = self.n();
        let mut scaled = DMatrix::zeros(n, keep.len());
        for (dst, &src) in keep.iter().enumerate() {
            let w = (-self.diag[src]).sqrt();
            scaled.set_column(dst, &(self.basis.column(src) * w));
        }
        let svd = linalg::thin_svd(scaled);
        let diag = svd.singular_values.map(|s| -(s * s));
        let out = Self::from_parts(
            Arc::new(svd.u),
            diag,
            self.c,
            Arc::clone(&self.mean),
            true,
            self.bounds,
            self.certification,
        );
        if out.certification == Certification::Unverified {
            // On an orthonormal basis the spectrum is explicit.
            out.certify()
        } else {
            Ok(out)
        }
    }

    /// `log det(I + (1/c)·AᵀA·D) + N·log c`, cached after the first call.
    pub fn log_det(&self) -> Result<f64> {
        if let Some(v) = self.log_det.get() {
            return Ok(*v);
        }
        if self.c <= 0.0 {
            return Err(Error::Indefinite(format!("log det needs c > 0, got {}", self.c)));
        }
        let r = self.rank();
        let value = if self.orthonormal {
            let mut acc = 0.0;
            for (t, d) in self.diag.iter().enumerate() {
                let v = 1.0 + d / self.c;
                if !(v > 0.0) {
                    return Err(Error::Indefinite(format!(
                        "determinant factor {v:e} for direction {t} is not positive"
                    )));
                }
                acc += v.ln();
            }
            acc
        } else {
            let gram = self.basis.tr_mul(&self.basis);
            let mut m = DMatrix::identity(r, r);
            for j in 0..r {
                let s = self.diag[j] / self.c;
                for i in 0..r {
                    m[(i, j)] += gram[(i, j)] * s;
                }
            }
            let (sign, log_abs) = linalg::sign_log_det(m);
            if sign <= 0.0 {
                return Err(Error::Indefinite(
                    "determinant of I + AᵀA·D/c is not positive".into(),
                ));
            }
            log_abs
        };
        let total = value + self.n() as f64 * self.c.ln();
        Ok(*self.log_det.get_or_init(|| total))
    }

    /// `L(Ω, x) = log det Ω − (x − μ)ᵀ Ω (x − μ)` through the factored form.
    pub fn log_likelihood(&self, x: &[f64]) -> Result<f64> {
        self.require_pd()?;
        if x.len() != self.n() {
            return Err(Error::DimensionMismatch {
                what: "sample",
                expected: self.n(),
                actual: x.len(),
            });
        }
        let logdet = self.log_det()?;
        let resid = DVector::from_iterator(self.n(), x.iter().zip(self.mean.iter()).map(|(a, m)| a - m));
        Ok(logdet - self.quadratic_form(&resid))
    }

    fn quadratic_form(&self, resid: &DVector<f64>) -> f64 {
        let proj = self.basis.tr_mul(resid);
        let low: f64 = proj.iter().zip(self.diag.iter()).map(|(p, d)| d * p * p).sum();
        low + self.c * resid.norm_squared()
    }

    /// Mean of [`LowRankPrecision::log_likelihood`] over the columns of `samples`.
    pub fn average_log_likelihood(&self, samples: &DMatrix<f64>) -> Result<f64> {
        self.require_pd()?;
        if samples.nrows() != self.n() {
            return Err(Error::DimensionMismatch {
                what: "sample",
                expected: self.n(),
                actual: samples.nrows(),
            });
        }
        if samples.ncols() == 0 {
            return Err(Error::param("no samples to evaluate"));
        }
        let logdet = self.log_det()?;
        let mut resid = samples.clone();
        for mut col in resid.column_iter_mut() {
            col -= &*self.mean;
        }
        let proj = self.basis.tr_mul(&resid);
        let mut quad = 0.0;
        for j in 0..resid.ncols() {
            let low: f64 = proj.column(j).iter().zip(self.diag.iter()).map(|(p, d)| d * p * p).sum();
            quad += low + self.c * resid.column(j).norm_squared();
        }
        Ok(logdet - quad / resid.ncols() as f64)
    }

    /// Gaussian conditional of `x[part1]` given `x[part2] = x2`.
    ///
    /// The conditional precision is the `(1,1)` block `U₁·D·U₁ᵀ + c·I`
    /// (returned non-orthonormal). The conditional mean is
    /// `μ₁ − U₁ (D·U₁ᵀU₁ + c·I)⁻¹ D·U₂ᵀ(x₂ − μ₂)`, an r×r solve; when
    /// `U₁ᵀU₁ = I` this is `μ₁ − U₁·diag(d/(d+c))·U₂ᵀ(x₂ − μ₂)`.
    pub fn conditional(
        &self,
        part1: &[usize],
        part2: &[usize],
        x2: &[f64],
    ) -> Result<(DVector<f64>, LowRankPrecision)> {
        self.require_pd()?;
        if !self.orthonormal {
            return Err(Error::param("conditional needs an orthonormal model; call orthonormalize"));
        }
        let n = self.n();
        let mut seen = vec![false; n];
        for &i in part1.iter().chain(part2) {
            if i >= n {
                return Err(Error::param(format!("index {i} out of range for {n} variables")));
            }
            if seen[i] {
                return Err(Error::param(format!("index {i} appears twice in the partition")));
            }
            seen[i] = true;
        }
        if part1.len() + part2.len() != n {
            return Err(Error::param("partition does not cover every variable"));
        }
        if part1.is_empty() {
            return Err(Error::param("conditioned block is empty"));
        }
        if x2.len() != part2.len() {
            return Err(Error::DimensionMismatch {
                what: "observed values",
                expected: part2.len(),
                actual: x2.len(),
            });
        }

        let r = self.rank();
        let u1 = self.basis.select_rows(part1);
        let mu1 = DVector::from_iterator(part1.len(), part1.iter().map(|&i| self.mean[i]));

        let mut cond_mean = mu1.clone();
        if r > 0 && !part2.is_empty() {
            let mut y = DVector::zeros(r);
            for (k, &i) in part2.iter().enumerate() {
                let dev = x2[k] - self.mean[i];
                for t in 0..r {
                    y[t] += self.basis[(i, t)] * dev;
                }
            }
            let w = y.component_mul(&self.diag);
            let gram = u1.tr_mul(&u1);
            let mut system = DMatrix::identity(r, r) * self.c;
            for i in 0..r {
                for j in 0..r {
                    system[(i, j)] += self.diag[i] * gram[(i, j)];
                }
            }
            let z = system
                .lu()
                .solve(&w)
                .ok_or_else(|| Error::Indefinite("conditional system is singular".into()))?;
            cond_mean -= &u1 * z;
        }

        let block = LowRankPrecision::from_parts(
            Arc::new(u1),
            self.diag.clone(),
            self.c,
            Arc::new(mu1),
            part2.is_empty(),
            // Principal sub-blocks interlace, so the parent bracket still holds.
            self.bounds,
            self.certification,
        );
        Ok((cond_mean, block))
    }

    fn check_index(&self, i: usize) -> Result<()> {
        if i >= self.n() {
            return Err(Error::param(format!("index {i} out of range for {} variables", self.n())));
        }
        Ok(())
    }

    /// `ω_{n1 n2}` for any pair, including the diagonal.
    pub fn entry(&self, n1: usize, n2: usize) -> f64 {
        let mut acc = 0.0;
        for t in 0..self.rank() {
            acc += self.diag[t] * self.basis[(n1, t)] * self.basis[(n2, t)];
        }
        if n1 == n2 {
            acc += self.c;
        }
        acc
    }

    /// Signed `ω_{n1n2} / √(ω_{n1n1}·ω_{n2n2})` in O(r).
    pub fn partial_correlation(&self, n1: usize, n2: usize) -> Result<f64> {
        self.require_pd()?;
        self.check_index(n1)?;
        self.check_index(n2)?;
        if n1 == n2 {
            return Err(Error::param("partial correlation needs two distinct variables"));
        }
        let w12 = self.entry(n1, n2);
        let w11 = self.entry(n1, n1);
        let w22 = self.entry(n2, n2);
        Ok(w12 / (w11 * w22).sqrt())
    }

    /// Linear-time detection of an unimportant variable set.
    ///
    /// With `m_t = max_n |a_nt|` and `r(n) = Σ_t d_t a_nt² + c = ω_nn`,
    /// `q(n) = Σ_t |d_t a_nt| m_t / √(r(n) · min r)` bounds every partial
    /// correlation involving `n`, so any two members of `{n : q(n) ≤ ε}`
    /// have `|partial correlation| ≤ ε`. The max includes `n` itself.
    pub fn screen_unimportant(&self, epsilon: f64) -> Result<Screening> {
        self.require_pd()?;
        crate::error::check_positive("epsilon", epsilon)?;
        let (n, r) = (self.n(), self.rank());
        let mut diag_w = DVector::from_element(n, self.c);
        let mut numer = DVector::<f64>::zeros(n);
        for t in 0..r {
            let col = self.basis.column(t);
            let d = self.diag[t];
            let m = col.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
            let dm = d.abs() * m;
            for i in 0..n {
                let a = col[i];
                diag_w[i] += d * a * a;
                numer[i] += dm * a.abs();
            }
        }
        if let Some(i) = diag_w.iter().position(|v| !(*v > 0.0)) {
            return Err(Error::Indefinite(format!("diagonal entry ω[{i}] = {} is not positive", diag_w[i])));
        }
        let r_min = diag_w.min();
        let q = DVector::from_fn(n, |i, _| numer[i] / (diag_w[i] * r_min).sqrt());
        let unimportant = (0..n).filter(|&i| q[i] <= epsilon).collect();
        Ok(Screening { unimportant, q })
    }

    /// Pairs among the variables that survive screening with
    /// `|partial correlation| > ε`, strongest first, at most `max_edges`.
    ///
    /// Pairs touching a screened variable cannot exceed ε, so nothing is missed.
    pub fn important_edges(&self, epsilon: f64, max_edges: usize) -> Result<Vec<Edge>> {
        let screening = self.screen_unimportant(epsilon)?;
        let mut keep = vec![true; self.n()];
        for &i in &screening.unimportant {
            keep[i] = false;
        }
        let candidates: Vec<usize> = (0..self.n()).filter(|&i| keep[i]).collect();
        let diag_w: Vec<f64> = candidates.iter().map(|&i| self.entry(i, i)).collect();
        let mut edges = Vec::new();
        for (a, &i) in candidates.iter().enumerate() {
            for (b, &j) in candidates.iter().enumerate().skip(a + 1) {
                let pc = self.entry(i, j) / (diag_w[a] * diag_w[b]).sqrt();
                if pc.abs() > epsilon {
                    edges.push(Edge {
                        n1: i,
                        n2: j,
                        partial_correlation: pc,
                    });
                }
            }
        }
        edges.sort_by(|x, y| {
            y.partial_correlation
                .abs()
                .total_cmp(&x.partial_correlation.abs())
                .then((x.n1, x.n2).cmp(&(y.n1, y.n2)))
        });
        edges.truncate(max_edges);
        Ok(edges)
    }

    pub fn materialize_dense(&self) -> Result<DMatrix<f64>> {
        self.materialize_dense_with_guard(DENSE_GUARD)
    }

    /// Explicit `A·diag(d)·Aᵀ + c·I`; refuses N above `guard`.
    pub fn materialize_dense_with_guard(&self, guard: usize) -> Result<DMatrix<f64>> {
        let n = self.n();
        if n > guard {
            return Err(Error::DenseGuard { n, guard });
        }
        let scaled = &*self.basis * DMatrix::from_diagonal(&self.diag);
        let mut out = scaled * self.basis.transpose();
        for i in 0..n {
            out[(i, i)] += self.c;
        }
        // Symmetrize away the last-bit asymmetry of the product.
        let sym = (&out + out.transpose()) * 0.5;
        Ok(sym)
    }
}

/// Writes `n1,n2,partial_correlation` rows, with names when given.
pub fn write_edges_csv<W: Write>(writer: W, edges: &[Edge], names: Option<&[String]>) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["n1", "n2", "partial_correlation"])?;
    for e in edges {
        let label = |i: usize| match names {
            Some(n) => n[i].clone(),
            None => i.to_string(),
        };
        w.write_record([label(e.n1), label(e.n2), crate::dataset::format_f64(e.partial_correlation)])?;
    }
    w.flush()?;
    Ok(())
}
