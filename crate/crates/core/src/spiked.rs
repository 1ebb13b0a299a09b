//! Spiked covariance ground truth, sampling, and evaluation.
//!
//! Samples follow `x = U·D^{1/2}·y + √(β/N)·ξ` with `U` orthonormal N×K, so
//! `E[xxᵀ] = U·D·Uᵀ + (β/N)·I`. Everything here stays in factored form.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{StandardNormal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{format_f64, DataMatrix};
use crate::error::{check_positive, Error, Result};
use crate::linalg;
use crate::precision::{Certification, LowRankPrecision, DENSE_GUARD};
use crate::sparsify::{self, ThresholdMode};
use crate::spectral::{self, EigenBounds, Method};

#[derive(Debug, Clone, PartialEq)]
pub struct SpikedModel {
    basis_u: DMatrix<f64>,
    diag_d: DVector<f64>,
    beta: f64,
    seed: u64,
}

impl SpikedModel {
    /// Ground truth from explicit parts; `basis` must be orthonormal and `diag` positive.
    pub fn new(basis: DMatrix<f64>, diag: DVector<f64>, beta: f64, seed: u64) -> Result<Self> {
        check_positive("beta", beta)?;
        if basis.nrows() == 0 {
            return Err(Error::param("spiked model needs at least one variable"));
        }
        if basis.ncols() != diag.len() {
            return Err(Error::DimensionMismatch {
                what: "spike strengths",
                expected: basis.ncols(),
                actual: diag.len(),
            });
        }
        if basis.ncols() > basis.nrows() {
            return Err(Error::param("more components than variables"));
        }
        if diag.iter().any(|d| !(*d > 0.0 && d.is_finite())) {
            return Err(Error::param("spike strengths must be positive"));
        }
        let err = linalg::orthonormality_error(&basis);
        if err > 1e-10 {
            return Err(Error::InvalidModel(format!("spike basis is not orthonormal (error {err:e})")));
        }
        Ok(Self {
            basis_u: basis,
            diag_d: diag,
            beta,
            seed,
        })
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis_u
    }

    pub fn diag(&self) -> &DVector<f64> {
        &self.diag_d
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn n_vars(&self) -> usize {
        self.basis_u.nrows()
    }

    pub fn k(&self) -> usize {
        self.basis_u.ncols()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Noise variance per coordinate, `β/N`.
    pub fn noise(&self) -> f64 {
        self.beta / self.n_vars() as f64
    }
}

/// Support size `⌈density·n⌉`, robust to products like `0.3·100 = 30.000000000000004`.
pub fn support_size(n: usize, density: f64) -> usize {
    ((density * n as f64) - 1e-9).ceil().max(1.0) as usize
}

/// Random ground truth with disjoint column supports.
///
/// Column `k` gets `⌈density·n⌉` rows no other column uses, filled with
/// standard normals and normalized, so `U` is exactly orthonormal and sparse.
/// Spike strengths are drawn from `U[0.5, 1.5]`.
pub fn random_spiked(n: usize, k: usize, beta: f64, density: f64, seed: u64) -> Result<SpikedModel> {
    check_positive("beta", beta)?;
    if k == 0 || n == 0 {
        return Err(Error::param("need n >= 1 and k >= 1"));
    }
    if !(density > 0.0 && density <= 1.0) {
        return Err(Error::param(format!("density must lie in (0, 1], got {density}")));
    }
    let s = support_size(n, density);
    if k * s > n {
        return Err(Error::param(format!(
            "{k} disjoint supports of size {s} do not fit in {n} variables"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows: Vec<usize> = (0..n).collect();
    rows.shuffle(&mut rng);
    let mut u = DMatrix::zeros(n, k);
    for j in 0..k {
        let support = &rows[j * s..(j + 1) * s];
        let mut norm2: f64 = 0.0;
        for &i in support {
            let v: f64 = rng.sample(StandardNormal);
            u[(i, j)] = v;
            norm2 += v * v;
        }
        if norm2 == 0.0 {
            u[(support[0], j)] = 1.0;
            norm2 = 1.0;
        }
        let inv = 1.0 / norm2.sqrt();
        for &i in support {
            u[(i, j)] *= inv;
        }
    }
    let dist = Uniform::new_inclusive(0.5, 1.5).expect("valid range");
    let diag = DVector::from_fn(k, |_, _| rng.sample(dist));
    SpikedModel::new(u, diag, beta, seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntryDist {
    #[default]
    Gaussian,
    Rademacher,
}

impl fmt::Display for EntryDist {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EntryDist::Gaussian => "gaussian",
            EntryDist::Rademacher => "rademacher",
        })
    }
}

impl FromStr for EntryDist {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gaussian" => Ok(EntryDist::Gaussian),
            "rademacher" => Ok(EntryDist::Rademacher),
            other => Err(Error::param(format!("unknown entry distribution {other:?}"))),
        }
    }
}

fn draw(rng: &mut ChaCha8Rng, dist: EntryDist) -> f64 {
    match dist {
        EntryDist::Gaussian => rng.sample(StandardNormal),
        EntryDist::Rademacher => {
            if rng.random_bool(0.5) {
                1.0
            } else {
                -1.0
            }
        }
    }
}

/// `t` uncentered samples as an N×t matrix.
pub fn sample_matrix(model: &SpikedModel, t: usize, dist: EntryDist, seed: u64) -> DMatrix<f64> {
    let (n, k) = (model.n_vars(), model.k());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sqrt_d = model.diag_d.map(f64::sqrt);
    let noise = model.noise().sqrt();
    let mut x = DMatrix::zeros(n, t);
    let mut y = DVector::zeros(k);
    for j in 0..t {
        for (i, yi) in y.iter_mut().enumerate() {
            *yi = sqrt_d[i] * draw(&mut rng, dist);
        }
        let mut col = x.column_mut(j);
        for v in col.iter_mut() {
            *v = noise * draw(&mut rng, dist);
        }
        col.gemv(1.0, &model.basis_u, &y, 1.0);
    }
    x
}

/// `t` samples as a (not centered) [`DataMatrix`].
pub fn sample(model: &SpikedModel, t: usize, dist: EntryDist, seed: u64) -> Result<DataMatrix> {
    if t == 0 {
        return Err(Error::param("need at least one sample"));
    }
    DataMatrix::new(sample_matrix(model, t, dist, seed))
}

/// `Σ = U·diag(d)·Uᵀ + noise·I` with orthonormal `U` and `d ≥ 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct FactoredCovariance {
    pub basis: DMatrix<f64>,
    pub diag: DVector<f64>,
    pub noise: f64,
}

impl FactoredCovariance {
    pub fn n(&self) -> usize {
        self.basis.nrows()
    }

    pub fn trace(&self) -> f64 {
        self.diag.sum() + self.n() as f64 * self.noise
    }

    pub fn spectral_norm(&self) -> f64 {
        self.diag.iter().fold(0.0_f64, |a, d| a.max(*d)) + self.noise
    }

    /// Eigenvalues of the spike directions; the remaining `N − K` equal `noise`.
    pub fn spike_eigenvalues(&self) -> DVector<f64> {
        self.diag.map(|d| d + self.noise)
    }

    pub fn log_det(&self) -> f64 {
        let k = self.diag.len();
        self.spike_eigenvalues().iter().map(|v| v.ln()).sum::<f64>()
            + (self.n() - k) as f64 * self.noise.ln()
    }

    /// `E_P[−L(Ω*, x)] = log det Σ + N`, in the units of the unscaled
    /// log-likelihood `log det Ω − xᵀΩx`.
    pub fn expected_negative_log_likelihood(&self) -> f64 {
        self.log_det() + self.n() as f64
    }

    pub fn materialize_dense(&self) -> Result<DMatrix<f64>> {
        let n = self.n();
        if n > DENSE_GUARD {
            return Err(Error::DenseGuard { n, guard: DENSE_GUARD });
        }
        let mut out = &self.basis * DMatrix::from_diagonal(&self.diag) * self.basis.transpose();
        for i in 0..n {
            out[(i, i)] += self.noise;
        }
        Ok((&out + out.transpose()) * 0.5)
    }
}

pub fn true_covariance(model: &SpikedModel) -> FactoredCovariance {
    FactoredCovariance {
        basis: model.basis_u.clone(),
        diag: model.diag_d.clone(),
        noise: model.noise(),
    }
}

/// `Ω* = Σ*⁻¹` in Tikhonov form with `ρ = β/N`, plus `‖Ω*‖_F` from its spectrum.
pub fn true_precision(model: &SpikedModel) -> (LowRankPrecision, f64) {
    let n = model.n_vars();
    let rho = model.noise();
    let diag = model.diag_d.map(|d| -d / (rho * (d + rho)));
    let c = 1.0 / rho;
    let frob2: f64 = model.diag_d.iter().map(|d| (1.0 / (d + rho)).powi(2)).sum::<f64>()
        + (n - model.k()) as f64 * c * c;
    let d_max = model.diag_d.iter().fold(0.0_f64, |a, d| a.max(*d));
    let bounds = EigenBounds {
        alpha: 1.0 / (d_max + rho),
        beta: c,
    };
    let prec = LowRankPrecision::from_parts(
        Arc::new(model.basis_u.clone()),
        diag,
        c,
        Arc::new(DVector::zeros(n)),
        true,
        Some(bounds),
        Certification::Analytic,
    );
    (prec, frob2.sqrt())
}

/// `40·(k·√‖D‖_F + √β)²·√((4 ln(n + k) + 2 ln(4/δ))/t)`.
pub fn concentration_gamma(k: usize, d_frob: f64, beta: f64, n: usize, t: usize, delta: f64) -> f64 {
    let lead = k as f64 * d_frob.sqrt() + beta.sqrt();
    let log_term = 4.0 * ((n + k) as f64).ln() + 2.0 * (4.0 / delta).ln();
    40.0 * lead * lead * (log_term / t as f64).sqrt()
}

/// `ρ = 2γ`.
pub fn recommend_rho(gamma: f64) -> f64 {
    2.0 * gamma
}

/// `γ·(1/4 + ‖Ω*‖_F + ‖Ω*‖²_F)`.
pub fn kl_excess_bound(gamma: f64, omega_frob: f64) -> f64 {
    gamma * (0.25 + omega_frob + omega_frob * omega_frob)
}

/// Relative tolerance for dropping directions of the joint basis.
pub const KL_JOINT_TOL: f64 = 1e-10;

fn log_det_pd(m: DMatrix<f64>, what: &str) -> Result<f64> {
    let chol = m
        .cholesky()
        .ok_or_else(|| Error::Indefinite(format!("{what} is not positive definite")))?;
    let l = chol.l_dirty();
    Ok(2.0 * (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>())
}

/// `KL(P‖Q) = ½(tr(Ω_Q Σ_P) − N − log det Σ_P − log det Ω_Q)` for equal means.
///
/// Both low-rank parts are projected onto an orthonormal basis `W` of
/// `[U_P | A_Q]`, which reduces the traces and determinants to m×m blocks
/// plus `N − m` copies of the scalar term `cs − 1 − ln(cs)`.
pub fn gaussian_kl(p: &FactoredCovariance, q: &LowRankPrecision) -> Result<f64> {
    let n = p.n();
    if q.n() != n {
        return Err(Error::DimensionMismatch {
            what: "distribution dimension",
            expected: n,
            actual: q.n(),
        });
    }
    let (s, c) = (p.noise, q.c());
    if !(s > 0.0) || !(c > 0.0) {
        return Err(Error::Indefinite("isotropic parts must be positive".into()));
    }
    let (kp, rq) = (p.basis.ncols(), q.rank());
    let mut joint = DMatrix::zeros(n, kp + rq);
    joint.columns_mut(0, kp).copy_from(&p.basis);
    joint.columns_mut(kp, rq).copy_from(q.basis());
    let w = linalg::thin_svd_relative(joint, KL_JOINT_TOL).u;
    let m = w.ncols();

    let project = |a: &DMatrix<f64>, d: &DVector<f64>, shift: f64| {
        let wa = w.tr_mul(a);
        let mut out = &wa * DMatrix::from_diagonal(d) * wa.transpose();
        out = (&out + out.transpose()) * 0.5;
        for i in 0..m {
            out[(i, i)] += shift;
        }
        out
    };
    let sigma_m = project(&p.basis, &p.diag, s);
    let omega_m = project(q.basis(), q.diag(), c);

    let trace = (&omega_m * &sigma_m).trace();
    let logdet_sigma = log_det_pd(sigma_m, "projected covariance")?;
    let logdet_omega = log_det_pd(omega_m, "projected precision")?;
    let block = 0.5 * (trace - m as f64 - logdet_sigma - logdet_omega);
    let cs = c * s;
    let rest = 0.5 * (n - m) as f64 * (cs - 1.0 - cs.ln());
    Ok(block + rest)
}

/// `ρ` grid given either as explicit values or as a `"lo:hi:log|lin:count"` string.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RhoGridSpec {
    Values(Vec<f64>),
    Spec(String),
}

impl RhoGridSpec {
    pub fn resolve(&self) -> Result<Vec<f64>> {
        let grid = match self {
            RhoGridSpec::Values(v) => v.clone(),
            RhoGridSpec::Spec(s) => spectral::parse_rho_grid(s)?,
        };
        if grid.is_empty() {
            return Err(Error::param("empty rho grid"));
        }
        for r in &grid {
            check_positive("rho", *r)?;
        }
        Ok(grid)
    }
}

/// Synthetic study configuration, read from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub n: usize,
    pub k: usize,
    pub beta: f64,
    pub density: f64,
    /// Defaults to `⌈3 ln n⌉`.
    #[serde(default)]
    pub t_train: Option<usize>,
    /// Defaults to `t_train`.
    #[serde(default)]
    pub t_val: Option<usize>,
    #[serde(default)]
    pub entry_dist: EntryDist,
    /// Defaults to [`default_scenario_grid`].
    #[serde(default)]
    pub rho_grid: Option<RhoGridSpec>,
    pub repetitions: usize,
    pub root_seed: u64,
}

/// 41 log-spaced points on `[1e-6, 1e2]`. Validated ρ for spiked data at
/// small T sits well below the standardized-data default range.
pub fn default_scenario_grid() -> Vec<f64> {
    spectral::grid(1e-6, 1e2, 41, true)
}

pub fn default_train_size(n: usize) -> usize {
    (3.0 * (n as f64).ln()).ceil().max(2.0) as usize
}

impl ScenarioConfig {
    pub fn t_train(&self) -> usize {
        self.t_train.unwrap_or_else(|| default_train_size(self.n))
    }

    pub fn t_val(&self) -> usize {
        self.t_val.unwrap_or_else(|| self.t_train())
    }

    pub fn grid(&self) -> Result<Vec<f64>> {
        match &self.rho_grid {
            Some(spec) => spec.resolve(),
            None => Ok(default_scenario_grid()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.repetitions == 0 {
            return Err(Error::param("repetitions must be at least 1"));
        }
        if self.t_train() < 2 || self.t_val() < 1 {
            return Err(Error::param("need t_train >= 2 and t_val >= 1"));
        }
        self.grid()?;
        check_positive("beta", self.beta)?;
        let s = support_size(self.n, self.density);
        if self.k == 0 || self.k * s > self.n || !(self.density > 0.0 && self.density <= 1.0) {
            return Err(Error::param("k, density and n do not admit disjoint supports"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioRow {
    pub repetition: usize,
    pub method: String,
    pub rho_selected: Option<f64>,
    pub kl: f64,
    pub runtime_ms: f64,
}

/// Seeds for one repetition: model, training draw, validation draw.
pub fn repetition_seeds(root_seed: u64, repetition: usize) -> [u64; 3] {
    let mut rng = ChaCha8Rng::seed_from_u64(root_seed);
    rng.set_stream(repetition as u64);
    [rng.next_u64(), rng.next_u64(), rng.next_u64()]
}

fn elapsed_ms(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

/// Isotropic maximum-likelihood baseline `c = N / tr Σ̂`.
pub fn isotropic_baseline(basis: &spectral::SpectralBasis) -> Result<LowRankPrecision> {
    let trace: f64 = basis.cov_eigenvalues().sum();
    if !(trace > 0.0) {
        return Err(Error::Indefinite("training data have zero variance".into()));
    }
    LowRankPrecision::isotropic(basis.n_vars() as f64 / trace, basis.mean().clone())
}

/// One repetition: draw a ground truth, fit every method with ρ chosen on
/// the validation draw, and score each by KL from the truth.
pub fn run_repetition(config: &ScenarioConfig, repetition: usize) -> Result<Vec<ScenarioRow>> {
    let grid = config.grid()?;
    let [s_model, s_train, s_val] = repetition_seeds(config.root_seed, repetition);
    let truth = random_spiked(config.n, config.k, config.beta, config.density, s_model)?;
    let cov = true_covariance(&truth);
    let train = sample(&truth, config.t_train(), config.entry_dist, s_train)?;
    let val = sample(&truth, config.t_val(), config.entry_dist, s_val)?;

    let start = Instant::now();
    let basis = spectral::thin_svd(&train.into_centered())?;
    let svd_ms = elapsed_ms(start);

    let mut rows = Vec::with_capacity(4);
    let mut riccati = None;
    for method in [Method::Riccati, Method::Tikhonov] {
        let start = Instant::now();
        let path = spectral::solution_path(&basis, &grid, method)?;
        let chosen = spectral::select_rho_by_validation(&path, &val)?;
        let model = path.model(chosen.best_index);
        let ms = svd_ms + elapsed_ms(start);
        rows.push(ScenarioRow {
            repetition,
            method: method.to_string(),
            rho_selected: Some(chosen.best_rho),
            kl: gaussian_kl(&cov, &model)?,
            runtime_ms: ms,
        });
        if method == Method::Riccati {
            riccati = Some((model, chosen.best_rho, ms));
        }
    }

    let start = Instant::now();
    let iso = isotropic_baseline(&basis)?;
    rows.push(ScenarioRow {
        repetition,
        method: "isotropic".into(),
        rho_selected: None,
        kl: gaussian_kl(&cov, &iso)?,
        runtime_ms: svd_ms + elapsed_ms(start),
    });

    let (model, rho, ms) = riccati.expect("riccati row present");
    let start = Instant::now();
    let (sparse, _, _) = sparsify::sparsify_model(&model, rho, ThresholdMode::Soft)?;
    rows.push(ScenarioRow {
        repetition,
        method: "riccati_sparse".into(),
        rho_selected: Some(rho),
        kl: gaussian_kl(&cov, &sparse)?,
        runtime_ms: ms + elapsed_ms(start),
    });
    Ok(rows)
}

/// All repetitions, in repetition order. Uses the current rayon pool;
/// results do not depend on the number of threads except for `runtime_ms`.
pub fn run_scenario(config: &ScenarioConfig) -> Result<Vec<ScenarioRow>> {
    config.validate()?;
    let per_rep: Result<Vec<Vec<ScenarioRow>>> = (0..config.repetitions)
        .into_par_iter()
        .map(|rep| run_repetition(config, rep))
        .collect();
    Ok(per_rep?.into_iter().flatten().collect())
}

pub fn write_scenario_csv<W: Write>(writer: W, rows: &[ScenarioRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["repetition", "method", "rho_selected", "kl", "runtime_ms"])?;
    for row in rows {
        w.write_record([
            row.repetition.to_string(),
            row.method.clone(),
            row.rho_selected.map(format_f64).unwrap_or_default(),
            format_f64(row.kl),
            format!("{:.3}", row.runtime_ms),
        ])?;
    }
    w.flush()?;
    Ok(())
}
