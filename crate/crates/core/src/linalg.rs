//! Tall-skinny dense kernels shared by the estimators.
//!
//! Nothing in here forms an N×N product: every routine works on N×r panels
//! and r×r cores, so memory stays O(N·r).

use nalgebra::{DMatrix, DVector};

/// Thin SVD `X = U · diag(s) · Vᵀ` with the numerically zero part removed.
#[derive(Debug, Clone)]
pub struct ThinSvd {
    /// N×r, orthonormal columns.
    pub u: DMatrix<f64>,
    /// Length r, nonincreasing, strictly positive.
    pub singular_values: DVector<f64>,
    /// r×T, orthonormal rows.
    pub v_t: DMatrix<f64>,
}

impl ThinSvd {
    pub fn rank(&self) -> usize {
        self.singular_values.len()
    }
}

/// Default rank cutoff `max(N, T) · ε · s_max`.
pub fn default_rank_tolerance(nrows: usize, ncols: usize, s_max: f64) -> f64 {
    nrows.max(ncols) as f64 * f64::EPSILON * s_max
}

/// Thin SVD with the default rank cutoff.
///
/// For N ≥ T the matrix is first reduced by a Householder QR (N×T), then the
/// T×T triangular factor is decomposed, so the cost is O(N·T²) and the only
/// N-sized buffers are N×T panels.
pub fn thin_svd(x: DMatrix<f64>) -> ThinSvd {
    thin_svd_with(x, |n, t, s_max| default_rank_tolerance(n, t, s_max))
}

/// Thin SVD keeping singular values strictly above `rel_tol · s_max`.
pub fn thin_svd_relative(x: DMatrix<f64>, rel_tol: f64) -> ThinSvd {
    thin_svd_with(x, |_, _, s_max| rel_tol * s_max)
}

fn thin_svd_with(x: DMatrix<f64>, cutoff: impl Fn(usize, usize, f64) -> f64) -> ThinSvd {
    let (n, t) = x.shape();
    if n == 0 || t == 0 {
        return ThinSvd {
            u: DMatrix::zeros(n, 0),
            singular_values: DVector::zeros(0),
            v_t: DMatrix::zeros(0, t),
        };
    }

    let (u, s, v_t) = if n >= t {
        let qr = x.qr();
        let r = qr.r();
        let q = qr.q();
        drop(qr);
        let (u_core, s, v) = jacobi_svd(r);
        (q * u_core, s, v.transpose())
    } else {
        // X = Rᵀ·Qᵀ from the QR of Xᵀ, so only the N×N factor is rotated.
        let qr = x.transpose().qr();
        let r = qr.r();
        let q = qr.q();
        drop(qr);
        let (u, s, w) = jacobi_svd(r.transpose());
        (u, s, (q * w).transpose())
    };

    // Sort descending and drop the numerically null directions.
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
    let s_max = order.first().map(|&i| s[i]).unwrap_or(0.0);
    let tol = cutoff(n, t, s_max);
    let keep: Vec<usize> = order
        .into_iter()
        .filter(|&i| s_max > 0.0 && s[i] > tol)
        .collect();

    let r = keep.len();
    let mut u_out = DMatrix::zeros(n, r);
    let mut v_out = DMatrix::zeros(r, t);
    let mut s_out = DVector::zeros(r);
    for (dst, &src) in keep.iter().enumerate() {
        u_out.set_column(dst, &u.column(src));
        v_out.set_row(dst, &v_t.row(src));
        s_out[dst] = s[src];
    }
    ThinSvd {
        u: u_out,
        singular_values: s_out,
        v_t: v_out,
    }
}

/// One-sided Jacobi SVD `M = U·diag(s)·Vᵀ` for an m×k matrix.
///
/// Column pairs are rotated until every pair is orthogonal to working
/// precision. Unlike the bidiagonal QR iteration this stays accurate on
/// triangular factors with an exactly zero singular value. Columns of `U`
/// belonging to zero singular values are left at zero.
fn jacobi_svd(mut m: DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>) {
    let k = m.ncols();
    let mut v = DMatrix::identity(k, k);
    let tol = m.nrows().max(1) as f64 * f64::EPSILON;
    for _sweep in 0..60 {
        let mut rotated = false;
        for p in 0..k {
            for q in (p + 1)..k {
                let (cp, cq) = (m.column(p), m.column(q));
                let alpha = cp.norm_squared();
                let beta = cq.norm_squared();
                let gamma = cp.dot(&cq);
                if gamma == 0.0 || gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_columns(&mut m, p, q, c, s);
                rotate_columns(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }
    let mut sv = DVector::zeros(k);
    for j in 0..k {
        let norm = m.column(j).norm();
        sv[j] = norm;
        if norm > 0.0 {
            m.column_mut(j).unscale_mut(norm);
        }
    }
    (m, sv, v)
}

fn rotate_columns(m: &mut DMatrix<f64>, p: usize, q: usize, c: f64, s: f64) {
    for i in 0..m.nrows() {
        let (a, b) = (m[(i, p)], m[(i, q)]);
        m[(i, p)] = c * a - s * b;
        m[(i, q)] = s * a + c * b;
    }
}

/// `‖AᵀA − I‖_max`, O(N·r²).
pub fn orthonormality_error(a: &DMatrix<f64>) -> f64 {
    let gram = a.tr_mul(a);
    let mut worst = 0.0_f64;
    for i in 0..gram.nrows() {
        for j in 0..gram.ncols() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((gram[(i, j)] - target).abs());
        }
    }
    worst
}

/// Eigenvalues of the symmetric low-rank matrix `A·diag(d)·Aᵀ` restricted to
/// the column space of `A` (at most r values; the rest of the spectrum is 0).
pub fn low_rank_eigenvalues(a: &DMatrix<f64>, d: &DVector<f64>) -> Vec<f64> {
    let r = a.ncols();
    if r == 0 || a.nrows() == 0 {
        return Vec::new();
    }
    let (q_width, core) = if a.nrows() >= r {
        let qr = a.clone().qr();
        let rr = qr.r();
        (r, &rr * DMatrix::from_diagonal(d) * rr.transpose())
    } else {
        // Wide factor: the N×N product is already the small side.
        let n = a.nrows();
        (n, a * DMatrix::from_diagonal(d) * a.transpose())
    };
    debug_assert_eq!(core.nrows(), q_width);
    let sym = (&core + core.transpose()) * 0.5;
    let mut ev: Vec<f64> = sym.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// Sign and log-magnitude of a square matrix's determinant via partial-pivot LU.
pub fn sign_log_det(m: DMatrix<f64>) -> (f64, f64) {
    if m.nrows() == 0 {
        return (1.0, 0.0);
    }
    let lu = m.lu();
    let mut sign: f64 = lu.p().determinant();
    let mut log_abs = 0.0;
    let u = lu.u();
    for i in 0..u.nrows() {
        let v = u[(i, i)];
        if v == 0.0 {
            return (0.0, f64::NEG_INFINITY);
        }
        if v < 0.0 {
            sign = -sign;
        }
        log_abs += v.abs().ln();
    }
    (sign, log_abs)
}
