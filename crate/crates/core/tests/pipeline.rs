//! End-to-end runs of the library pipeline.

use spectral_precision::dataset::{self, CsvOptions, DataMatrix, Orientation};
use spectral_precision::spectral::{self, Method};
use spectral_precision::spiked::{self, EntryDist, RhoGridSpec, ScenarioConfig};
use spectral_precision::{oracle, persist, sparsify};

fn spiked_data(n: usize, t: usize, seed: u64) -> (spiked::SpikedModel, DataMatrix) {
    let truth = spiked::random_spiked(n, 2, 1.0, 0.25, seed).unwrap();
    let data = spiked::sample(&truth, t, EntryDist::Gaussian, seed + 1).unwrap();
    (truth, data)
}

#[test]
fn csv_to_validated_fit_to_file() {
    let dir = tempfile::tempdir().unwrap();
    let (truth, train) = spiked_data(40, 12, 3);
    let val = spiked::sample(&truth, 12, EntryDist::Gaussian, 99).unwrap();
    let opts = CsvOptions {
        orientation: Orientation::SamplesAsRows,
        ..Default::default()
    };
    let train_path = dir.path().join("train.csv");
    dataset::write_csv(&train_path, &train, &opts).unwrap();
    let loaded = dataset::load_csv(&train_path, &opts).unwrap();
    assert_eq!(loaded.values(), train.values());

    let basis = spectral::thin_svd(&loaded.into_centered()).unwrap();
    let grid = spectral::grid(1e-4, 1e1, 16, true);
    let path = spectral::solution_path(&basis, &grid, Method::Riccati).unwrap();
    let chosen = spectral::select_rho_by_validation(&path, &val).unwrap();
    let model = path.model(chosen.best_index);

    // Validation score is the average held-out log-likelihood.
    let direct = model.average_log_likelihood(val.values()).unwrap();
    assert!((direct - chosen.scores[chosen.best_index].1).abs() < 1e-10 * direct.abs());

    let model_path = dir.path().join("model.json");
    persist::save_model(&model_path, &model).unwrap();
    let back = persist::load_model(&model_path).unwrap();
    assert_eq!(back, model);
    assert_eq!(back.bounds(), model.bounds());

    // The selected fit beats the isotropic baseline on fresh data.
    let test = spiked::sample(&truth, 200, EntryDist::Gaussian, 1234).unwrap();
    let iso = spiked::isotropic_baseline(&basis).unwrap();
    assert!(model.average_log_likelihood(test.values()).unwrap() > iso.average_log_likelihood(test.values()).unwrap());
}

#[test]
fn sparsified_model_survives_persistence() {
    let (_, train) = spiked_data(30, 8, 7);
    let basis = spectral::thin_svd(&train.into_centered()).unwrap();
    let model = spectral::riccati_fit(&basis, 0.05).unwrap();
    for mode in [sparsify::ThresholdMode::Soft, sparsify::ThresholdMode::Hard] {
        let (sparse, factor, _) = sparsify::sparsify_model(&model, 0.5, mode).unwrap();
        factor.validate().unwrap();
        let json = persist::to_json_string(&sparse).unwrap();
        let back = persist::read_model(json.as_bytes()).unwrap();
        assert_eq!(back, sparse);
        let d = (back.materialize_dense().unwrap() - sparse.materialize_dense().unwrap()).amax();
        assert_eq!(d, 0.0);
    }
}

#[test]
fn scenario_rows_are_deterministic_and_sensible() {
    let config = ScenarioConfig {
        n: 40,
        k: 2,
        beta: 1.0,
        density: 0.3,
        t_train: None,
        t_val: None,
        entry_dist: EntryDist::Rademacher,
        rho_grid: Some(RhoGridSpec::Spec("1e-5:1e1:log:13".into())),
        repetitions: 4,
        root_seed: 77,
    };
    let a = spiked::run_scenario(&config).unwrap();
    let b = spiked::run_scenario(&config).unwrap();
    assert_eq!(a.len(), 16);
    for (x, y) in a.iter().zip(&b) {
        assert_eq!((x.repetition, &x.method, x.rho_selected), (y.repetition, &y.method, y.rho_selected));
        assert_eq!(x.kl.to_bits(), y.kl.to_bits());
        assert!(x.kl >= 0.0);
    }
    let mut out = Vec::new();
    spiked::write_scenario_csv(&mut out, &a).unwrap();
    let text = String::from_utf8(out).unwrap();
    assert!(text.starts_with("repetition,method,rho_selected,kl,runtime_ms\n"));
    assert!(text.lines().any(|l| l.contains(",isotropic,,")));
}

#[test]
fn kl_chain_bound_holds_on_monte_carlo_draws() {
    // The sample-complexity chain: when the covariance deviation is within
    // gamma, the Riccati fit at rho = 2 gamma has excess KL within the bound.
    let (n, k, t, delta) = (30, 2, 60, 0.1);
    for seed in 0..20 {
        let truth = spiked::random_spiked(n, k, 1.0, 0.2, 300 + seed).unwrap();
        let cov = spiked::true_covariance(&truth);
        let gamma = spiked::concentration_gamma(k, truth.diag().norm(), truth.beta(), n, t, delta);
        let data = spiked::sample(&truth, t, EntryDist::Gaussian, 400 + seed).unwrap().into_centered();
        let dev = (oracle::sample_covariance(data.values()) - cov.materialize_dense().unwrap()).norm();
        if dev > gamma {
            continue;
        }
        let basis = spectral::thin_svd(&data).unwrap();
        let q = spectral::riccati_fit(&basis, spiked::recommend_rho(gamma)).unwrap();
        let (_, frob) = spiked::true_precision(&truth);
        let kl = spiked::gaussian_kl(&cov, &q).unwrap();
        assert!(kl <= spiked::kl_excess_bound(gamma, frob), "seed {seed}: {kl}");
    }
}

#[test]
fn standardized_fit_has_unit_diagonal_covariance() {
    let (_, train) = spiked_data(25, 10, 11);
    let (z, constant) = train.standardize();
    assert!(constant.is_empty());
    let cov = oracle::sample_covariance(z.values());
    for i in 0..25 {
        assert!((cov[(i, i)] - 1.0).abs() < 1e-12);
    }
    let basis = spectral::thin_svd(&z).unwrap();
    assert!(basis.mean().iter().all(|m| *m == 0.0));
    let dense = oracle::dense_riccati(&cov, 0.5).unwrap();
    let fast = spectral::fit(&basis, 0.5, Method::Riccati).unwrap().materialize_dense().unwrap();
    assert!((fast - dense).amax() < 1e-10);
}
