//! Fit timing over a size grid.

use std::io::Write;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::dataset::{format_f64, DataMatrix};
use crate::error::{check_positive, Error, Result};
use crate::spectral::{self, Method};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub n: usize,
    pub t: usize,
    /// Best wall time over the repeats, centering + SVD + fit.
    pub fit_ms: f64,
    /// Estimated peak bytes of the N×T panels alive during the fit
    /// (data, QR factor, Q, basis).
    pub peak_factor_bytes: usize,
}

/// Standard normal N×T data from a seeded generator.
pub fn random_data(n: usize, t: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DMatrix::from_fn(n, t, |_, _| StandardNormal.sample(&mut rng))
}

/// Upper estimate of simultaneously live f64 storage during a fit.
pub fn peak_bytes_estimate(n: usize, t: usize, r: usize) -> usize {
    std::mem::size_of::<f64>() * n * (3 * t + r)
}

pub fn time_fit(data: &DataMatrix, rho: f64, method: Method) -> Result<(f64, usize)> {
    let start = Instant::now();
    let basis = spectral::thin_svd_owned(data.center())?;
    let model = spectral::fit(&basis, rho, method)?;
    let ms = start.elapsed().as_secs_f64() * 1e3;
    Ok((ms, model.rank()))
}

/// Best-of-`repeats` fit time for each size.
pub fn run_bench(sizes: &[(usize, usize)], repeats: usize, rho: f64, method: Method, seed: u64) -> Result<Vec<BenchRow>> {
    check_positive("rho", rho)?;
    if repeats == 0 {
        return Err(Error::param("repeats must be at least 1"));
    }
    let mut rows = Vec::with_capacity(sizes.len());
    for &(n, t) in sizes {
        let data = DataMatrix::new(random_data(n, t, seed))?;
        let mut best = f64::INFINITY;
        let mut rank = 0;
        for _ in 0..repeats {
            let (ms, r) = time_fit(&data, rho, method)?;
            best = best.min(ms);
            rank = r;
        }
        rows.push(BenchRow {
            n,
            t,
            fit_ms: best,
            peak_factor_bytes: peak_bytes_estimate(n, t, rank),
        });
    }
    Ok(rows)
}

/// Parses a comma-separated list of sizes, e.g. `"4096,8192"`.
pub fn parse_sizes(spec: &str) -> Result<Vec<usize>> {
    spec.split(',')
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .ok()
                .filter(|v| *v > 0)
                .ok_or_else(|| Error::param(format!("invalid size {s:?}")))
        })
        .collect()
}

pub fn write_bench_csv<W: Write>(writer: W, rows: &[BenchRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["n", "t", "fit_ms", "peak_factor_bytes"])?;
    for r in rows {
        w.write_record([r.n.to_string(), r.t.to_string(), format_f64(r.fit_ms), r.peak_factor_bytes.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
