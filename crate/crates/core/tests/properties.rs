//! Property tests for the invariants of every module.

use kernel_td::estimator::{
    build_feature_system, build_kernel_matrices, l2mu_error, solve_features, solve_lstd,
    WeightVector,
};
use kernel_td::harness::{mean_and_stderr, parse_csv, write_csv, ResultRow};
use kernel_td::lowerbound::{build_packing, hamming};
use kernel_td::mrp::build_experiment_mrp;
use kernel_td::oracle::{
    population_backward, population_forward, projected_fixed_point, value_function,
    weighted_bellman,
};
use kernel_td::rkhs::KernelSpec;
use kernel_td::theory::critical_radius;
use kernel_td::trace::sa_run;
use nalgebra::{DMatrix, SymmetricEigen};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn config() -> ProptestConfig {
    ProptestConfig {
        cases: 24,
        ..ProptestConfig::default()
    }
}

fn weights() -> impl Strategy<Value = WeightVector> {
    prop_oneof![
        (1usize..6).prop_map(|k| WeightVector::kstep(k).unwrap()),
        (1usize..6, 0.0f64..0.95).prop_map(|(k, l)| WeightVector::td_lambda(k, l).unwrap()),
    ]
}

fn rel_diff(a: &[f64], b: &[f64], w: &[f64]) -> f64 {
    let num = l2mu_error(a, b, w).unwrap();
    let den = l2mu_error(b, &vec![0.0; b.len()], w).unwrap().max(1e-300);
    (num / den).sqrt()
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn discretized_kernels_are_stochastic_and_stationary(
        tau in 1.0f64..500.0, theta in 0.0f64..1.5, bits in 2u32..9,
    ) {
        let mrp = build_experiment_mrp(tau, theta, 1.0, 0.9).unwrap();
        let grid = mrp.discretize(1 << bits).unwrap();
        prop_assert!(grid.row_sum_residual() < 1e-12);
        prop_assert!(grid.stationarity_residual() < 1e-10);
    }

    #[test]
    fn sampling_is_reproducible(tau in 1.0f64..100.0, seed in any::<u64>(), n in 1usize..300) {
        let mrp = build_experiment_mrp(tau, 0.3, 1.0, 0.9).unwrap();
        let a = mrp.sample_single_path(n, seed);
        let b = mrp.sample_single_path(n, seed);
        prop_assert_eq!(a.states(), b.states());
    }

    #[test]
    fn experiment_kernel_satisfies_minorization(tau in 1.0f64..1e4) {
        let mrp = build_experiment_mrp(tau, 0.0, 1.0, 0.9).unwrap();
        prop_assert!(mrp.minorization_constant() >= 1.0 / tau - 1e-12);
    }

    #[test]
    fn gram_matrices_are_psd(j in 1usize..32, theta in 0.0f64..1.5, seed in any::<u64>()) {
        let spec = KernelSpec::poly(1.2, j, theta).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xs: Vec<f64> = (0..20).map(|_| rng.random::<f64>()).collect();
        let g = DMatrix::from_fn(20, 20, |a, b| spec.kernel_eval(xs[a], xs[b]).unwrap());
        let eig = SymmetricEigen::new(g.clone()).eigenvalues;
        prop_assert!(eig.min() >= -1e-10 * g.trace());
    }

    #[test]
    fn eigenvalues_are_nonincreasing(j in 1usize..200) {
        for spec in [KernelSpec::poly(1.2, j, 0.0).unwrap(), KernelSpec::exponential(j.min(26), 0.0).unwrap()] {
            prop_assert!(spec.eigenvalues().windows(2).all(|p| p[0] >= p[1]));
        }
    }

    #[test]
    fn weight_vectors_lie_on_the_simplex(w in weights(), gamma in 0.0f64..0.999) {
        let sum: f64 = w.weights().iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-12);
        prop_assert!(w.weights().iter().all(|&v| v >= 0.0));
        prop_assert!(w.effective_discount(gamma) <= gamma + 1e-15);
    }

    #[test]
    fn kernel_and_feature_paths_agree(
        w in weights(), j in 2usize..16, n in 30usize..120, tau in 1.0f64..50.0,
        theta in 0.0f64..1.5, seed in any::<u64>(),
    ) {
        let mrp = build_experiment_mrp(tau, theta, 1.0, 0.9).unwrap();
        let spec = KernelSpec::poly(1.2, j, theta).unwrap();
        let data = mrp.sample_single_path(n, seed);
        let ridge = 1e-3;
        let a = solve_lstd(&build_kernel_matrices(&data, &mrp, &spec, &w).unwrap(), ridge).unwrap();
        let b = solve_features(&build_feature_system(&data, &mrp, &spec, &w).unwrap(), ridge).unwrap();
        let m = spec.grid_size();
        let cell = vec![1.0 / m as f64; m];
        let va = a.grid_values(m).unwrap();
        let vb = b.grid_values(m).unwrap();
        prop_assert!(rel_diff(&va, &vb, &cell) < 1e-8);
    }

    #[test]
    fn huge_ridge_returns_the_reward(w in weights(), seed in any::<u64>()) {
        let mrp = build_experiment_mrp(5.0, 0.4, 1.0, 0.9).unwrap();
        let spec = KernelSpec::poly(1.2, 8, 0.4).unwrap();
        let data = mrp.sample_single_path(80, seed);
        let sys = build_feature_system(&data, &mrp, &spec, &w).unwrap();
        let est = solve_features(&sys, 1e10).unwrap();
        prop_assert!(est.coordinates().amax() < 1e-8);
    }

    #[test]
    fn rank_one_inverse_tracks_fresh_inverse(w in weights(), seed in any::<u64>(), n in 40usize..400) {
        let mrp = build_experiment_mrp(4.0, 0.2, 1.0, 0.9).unwrap();
        let spec = KernelSpec::poly(1.2, 6, 0.2).unwrap();
        let data = mrp.sample_single_path(n, seed);
        let (_, state) = sa_run(&data, &mrp, &spec, &w, 0.05).unwrap();
        let fresh = state.a.clone().try_inverse().unwrap();
        let scale = fresh.amax();
        prop_assert!((&state.a_inv - fresh).amax() < 1e-8 * scale);
        prop_assert!(state.max_drift < 1e-8);
    }

    #[test]
    fn population_operators_agree_and_solve_the_fixed_point(
        w in weights(), tau in 1.0f64..100.0, theta in 0.0f64..1.5, j in 2usize..24,
    ) {
        let mrp = build_experiment_mrp(tau, theta, 1.0, 0.9).unwrap();
        let spec = KernelSpec::poly(1.2, j, theta).unwrap();
        let grid = mrp.discretize(spec.grid_size()).unwrap();
        let (a, b) = population_backward(&grid, &spec, &w).unwrap();
        let (cov, cross) = population_forward(&grid, &spec, &w).unwrap();
        prop_assert!((&a - (cov - cross)).amax() < 1e-10);
        let fp = projected_fixed_point(&grid, &spec, &w).unwrap();
        prop_assert!((a * &fp.coordinates - b).amax() < 1e-8);
    }

    #[test]
    fn weighted_bellman_contracts(w in weights(), tau in 1.0f64..100.0, seed in any::<u64>()) {
        let mrp = build_experiment_mrp(tau, 0.5, 1.0, 0.9).unwrap();
        let grid = mrp.discretize(32).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f: Vec<f64> = (0..32).map(|_| rng.random_range(-5.0..5.0)).collect();
        let g: Vec<f64> = (0..32).map(|_| rng.random_range(-5.0..5.0)).collect();
        let bf = weighted_bellman(&grid, &f, &w);
        let bg = weighted_bellman(&grid, &g, &w);
        let d_out: Vec<f64> = bf.iter().zip(&bg).map(|(a, b)| a - b).collect();
        let d_in: Vec<f64> = f.iter().zip(&g).map(|(a, b)| a - b).collect();
        prop_assert!(grid.norm(&d_out) <= w.effective_discount(0.9) * grid.norm(&d_in) + 1e-12);
    }

    #[test]
    fn total_variance_identity(tau in 1.0f64..100.0, theta in 0.0f64..1.5) {
        let mrp = build_experiment_mrp(tau, theta, 1.0, 0.9).unwrap();
        let grid = mrp.discretize(16).unwrap();
        let v = value_function(&grid).unwrap();
        let pv = grid.apply(&v);
        let direct = grid.inner(&v, &v) - grid.inner(&pv, &pv);
        prop_assert!((grid.conditional_variance(&v) - direct).abs() < 1e-10 * grid.inner(&v, &v));
    }

    #[test]
    fn critical_radius_is_monotone(
        z1 in 0.1f64..50.0, z2 in 0.1f64..50.0, n1 in 10.0f64..1e5, n2 in 10.0f64..1e5,
    ) {
        let spec = KernelSpec::poly(1.2, 256, 0.0).unwrap();
        let eigs = spec.eigenvalues();
        let up = 1e3;
        let d = |z: f64, n: f64| critical_radius(eigs, n, 1.0, 2.0, z, up).unwrap();
        let (zl, zh) = (z1.min(z2), z1.max(z2));
        let (nl, nh) = (n1.min(n2), n1.max(n2));
        prop_assert!(d(zl, nl) <= d(zh, nl) * (1.0 + 1e-9));
        prop_assert!(d(zl, nh) <= d(zl, nl) * (1.0 + 1e-9));
    }

    #[test]
    fn csv_round_trip_and_stderr(values in prop::collection::vec(0.0f64..10.0, 1..40)) {
        let (mean, se) = mean_and_stderr(&values);
        let k = values.len() as f64;
        let m2 = values.iter().sum::<f64>() / k;
        let var = if values.len() > 1 {
            values.iter().map(|v| (v - m2).powi(2)).sum::<f64>() / (k - 1.0)
        } else {
            0.0
        };
        prop_assert!((mean - m2).abs() < 1e-12);
        prop_assert!((se - (var / k).sqrt()).abs() < 1e-12);
        let rows = vec![ResultRow {
            method: "a,b;c".into(), n: values.len(), mse_mean: mean, mse_stderr: se, trials: 3, failures: 1,
        }];
        let mut buf = Vec::new();
        write_csv(&rows, &mut buf).unwrap();
        prop_assert_eq!(parse_csv(buf.as_slice()).unwrap(), rows);
    }
}

#[test]
fn packings_are_balanced_and_separated() {
    for u in [2usize, 4, 8, 16] {
        let codes = build_packing(u).unwrap();
        assert!((codes.len() as f64).ln() >= u as f64 / 11.0);
        for (i, a) in codes.iter().enumerate() {
            assert_eq!(a.iter().map(|&v| v as usize).sum::<usize>(), u / 2);
            for b in &codes[..i] {
                assert!(hamming(a, b) >= 0.25);
            }
        }
    }
}

#[test]
fn files_round_trip_through_disk() {
    use kernel_td::config::ExperimentConfig;
    use kernel_td::harness::{emit_csv, figure_preset, read_csv};

    let dir = tempfile::tempdir().unwrap();
    let cfg = figure_preset("fig2a", true).unwrap();
    let cfg_path = dir.path().join("fig2a.toml");
    std::fs::write(&cfg_path, cfg.to_toml().unwrap()).unwrap();
    assert_eq!(ExperimentConfig::from_file(&cfg_path).unwrap(), cfg);

    let rows = vec![ResultRow {
        method: "tau=2.0000;theta=0.1963;path;k5;forward".into(),
        n: 1096,
        mse_mean: 0.25,
        mse_stderr: 0.01,
        trials: 200,
        failures: 0,
    }];
    let csv_path = dir.path().join("rows.csv");
    emit_csv(&rows, &csv_path).unwrap();
    assert_eq!(read_csv(&csv_path).unwrap(), rows);
    emit_csv(&[], &csv_path).unwrap();
    assert!(read_csv(&csv_path).unwrap().is_empty());
}
