//! Acceptance criteria. Each test prints one `criterion N: PASS|FAIL` line.
//!
//! The tests share one lock so that wall-clock limits measure a single
//! criterion at a time.

use std::f64::consts::PI;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use kernel_td::config::{InstanceSpec, ModeSpec, SolverSpec, WeightSpec};
use kernel_td::estimator::{
    build_feature_system, build_kernel_matrices, l2mu_error, solve_features, solve_lstd,
    WeightVector,
};
use kernel_td::harness::{
    figure_preset, fit_loglog_slope, run_experiment, ExperimentResult, MethodKey,
};
use kernel_td::lowerbound::{HardFamily, LbParams};
use kernel_td::mrp::{build_experiment_mrp, Dataset};
use kernel_td::oracle::{check_sigma_bounds, noise_report, value_function, weighted_bellman};
use kernel_td::rkhs::KernelSpec;
use kernel_td::theory::{critical_radius, finite_rank_radius};
use kernel_td::trace::{sa_run, solve_backward};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

static SERIAL: Mutex<()> = Mutex::new(());

fn report(id: u32, ok: bool, limit: Duration, start: Instant, detail: String) {
    let elapsed = start.elapsed();
    let pass = ok && elapsed <= limit;
    println!(
        "criterion {id}: {} ({detail}; {:.1}s of {}s)",
        if pass { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64(),
        limit.as_secs()
    );
    assert!(ok, "criterion {id} failed: {detail}");
    assert!(
        elapsed <= limit,
        "criterion {id} exceeded {limit:?}: {elapsed:?}"
    );
}

fn random_weights(rng: &mut ChaCha8Rng, max_k: usize) -> WeightVector {
    let k = rng.random_range(1..=max_k);
    if rng.random_bool(0.5) {
        WeightVector::kstep(k).unwrap()
    } else {
        WeightVector::td_lambda(k, rng.random_range(0.0..0.9)).unwrap()
    }
}

fn random_data(
    rng: &mut ChaCha8Rng,
    mrp: &kernel_td::mrp::MrpInstance,
    n: usize,
    k: usize,
) -> Dataset {
    let seed = rng.random();
    if rng.random_bool(0.5) {
        mrp.sample_single_path(n, seed)
    } else {
        let l = rng.random_range(k + 2..k + 12);
        mrp.sample_episodes(n, l, seed).unwrap()
    }
}

#[test]
fn criterion_01_kernel_and_feature_solves_agree() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let tau = rng.random_range(1.0..300.0);
        let theta = rng.random_range(0.0..PI / 2.0);
        let j = rng.random_range(2..=32);
        let n = rng.random_range(40..=200);
        let w = random_weights(&mut rng, 4);
        let ridge = 10f64.powf(rng.random_range(-4.0..-1.0));
        let mrp = build_experiment_mrp(tau, theta, 1.0, rng.random_range(0.5..0.99)).unwrap();
        let spec = if rng.random_bool(0.5) {
            KernelSpec::poly(1.2, j, theta).unwrap()
        } else {
            KernelSpec::exponential(j.min(8), theta).unwrap()
        };
        let data = random_data(&mut rng, &mrp, n, w.look_ahead());
        let kernel = solve_lstd(
            &build_kernel_matrices(&data, &mrp, &spec, &w).unwrap(),
            ridge,
        )
        .unwrap();
        let feature = solve_features(
            &build_feature_system(&data, &mrp, &spec, &w).unwrap(),
            ridge,
        )
        .unwrap();
        let m = spec.grid_size();
        let cells = vec![1.0 / m as f64; m];
        let a = kernel.grid_values(m).unwrap();
        let b = feature.grid_values(m).unwrap();
        let rel = (l2mu_error(&a, &b, &cells).unwrap()
            / l2mu_error(&b, &vec![0.0; m], &cells).unwrap())
        .sqrt();
        worst = worst.max(rel);
    }
    report(
        1,
        worst < 1e-8,
        Duration::from_secs(30),
        start,
        format!("max relative L2 difference {worst:.2e}"),
    );
}

#[test]
fn criterion_02_online_recursion_matches_backward_solve() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let tau = rng.random_range(1.0..300.0);
        let theta = rng.random_range(0.0..PI / 2.0);
        let j = rng.random_range(2..=32);
        let n = rng.random_range(100..=2000);
        let w = random_weights(&mut rng, 6);
        let ridge = 10f64.powf(rng.random_range(-3.0..-0.5));
        let mrp = build_experiment_mrp(tau, theta, 1.0, 0.9).unwrap();
        let spec = KernelSpec::poly(1.2, j, theta).unwrap();
        let data = mrp.sample_single_path(n, rng.random());
        let batch = solve_backward(&data, &mrp, &spec, &w, ridge).unwrap();
        let (online, _) = sa_run(&data, &mrp, &spec, &w, ridge).unwrap();
        let rel = (online.coordinates() - batch.coordinates()).norm() / batch.coordinates().norm();
        worst = worst.max(rel);
    }
    report(
        2,
        worst < 1e-8,
        Duration::from_secs(60),
        start,
        format!("max relative coordinate gap {worst:.2e}"),
    );
}

#[test]
fn criterion_03_population_fixed_points() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let (mut fp, mut bell, mut contraction) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..10 {
        let tau = rng.random_range(1.0..300.0);
        let theta = rng.random_range(0.0..PI / 2.0);
        let w = random_weights(&mut rng, 10);
        let gamma = rng.random_range(0.5..0.99);
        let mrp = build_experiment_mrp(tau, theta, rng.random_range(0.5..2.0), gamma).unwrap();
        let spec = KernelSpec::poly(1.2, rng.random_range(2..=64), theta).unwrap();
        let grid = mrp.discretize(spec.grid_size()).unwrap();
        let rep = noise_report(&grid, &spec, &w, None).unwrap();
        fp = fp.max(rep.fixed_point_residual);
        let v = value_function(&grid).unwrap();
        let bv = weighted_bellman(&grid, &v, &w);
        bell = bell.max(
            bv.iter()
                .zip(&v)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max),
        );
        let m = grid.size();
        for _ in 0..20 {
            let f: Vec<f64> = (0..m).map(|_| rng.random_range(-10.0..10.0)).collect();
            let g: Vec<f64> = (0..m).map(|_| rng.random_range(-10.0..10.0)).collect();
            let (bf, bg) = (
                weighted_bellman(&grid, &f, &w),
                weighted_bellman(&grid, &g, &w),
            );
            let out: Vec<f64> = bf.iter().zip(&bg).map(|(a, b)| a - b).collect();
            let inp: Vec<f64> = f.iter().zip(&g).map(|(a, b)| a - b).collect();
            contraction =
                contraction.max(grid.norm(&out) / grid.norm(&inp) - w.effective_discount(gamma));
        }
    }
    let ok = fp < 1e-9 && bell < 1e-10 && contraction <= 1e-12;
    report(
        3,
        ok,
        Duration::from_secs(10),
        start,
        format!("fixed-point residual {fp:.2e}, Bellman residual {bell:.2e}, contraction excess {contraction:.2e}"),
    );
}

fn key(tau: f64, theta: f64, mode: ModeSpec, weights: WeightSpec) -> MethodKey {
    MethodKey {
        instance: InstanceSpec { tau, theta },
        mode,
        weights,
        solver: SolverSpec::Forward,
    }
}

fn mse(res: &ExperimentResult, k: &MethodKey, n: usize) -> f64 {
    let row = res.row(k, n).expect("row present");
    assert_eq!(row.failures, 0, "{} n={n} had solver failures", row.method);
    row.mse_mean
}

#[test]
fn criterion_04_trajectory_and_iid_agree_when_well_specified() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let mut cfg = figure_preset("fig1a", false).unwrap();
    let sizes = cfg.sizes();
    cfg.sample_sizes = sizes[sizes.len() - 3..].to_vec();
    let res = run_experiment(&cfg).unwrap();
    let mut worst: f64 = 0.0;
    for inst in &cfg.instances {
        for &n in &cfg.sample_sizes {
            let path = mse(
                &res,
                &key(inst.tau, inst.theta, ModeSpec::Path, WeightSpec::KStep(1)),
                n,
            );
            let iid = mse(
                &res,
                &key(inst.tau, inst.theta, ModeSpec::Iid, WeightSpec::KStep(1)),
                n,
            );
            worst = worst.max((path.ln() - iid.ln()).abs());
        }
    }
    let truncated: usize = res.truncated.iter().sum();
    report(
        4,
        worst < 1.5f64.ln() && truncated == 0,
        Duration::from_secs(15 * 60),
        start,
        format!(
            "max path/iid MSE ratio {:.3} (limit 1.5), {truncated} capped errors",
            worst.exp()
        ),
    );
}

#[test]
fn criterion_05_trajectory_penalty_grows_with_mixing_time() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let mut cfg = figure_preset("fig1b", false).unwrap();
    let n = *cfg.sizes().last().unwrap();
    cfg.sample_sizes = vec![n];
    let res = run_experiment(&cfg).unwrap();
    let gap = |inst: &InstanceSpec| {
        let path = mse(
            &res,
            &key(inst.tau, inst.theta, ModeSpec::Path, WeightSpec::KStep(1)),
            n,
        );
        let iid = mse(
            &res,
            &key(inst.tau, inst.theta, ModeSpec::Iid, WeightSpec::KStep(1)),
            n,
        );
        (path, iid)
    };
    let (fast_path, fast_iid) = gap(&cfg.instances[0]);
    let (slow_path, slow_iid) = gap(&cfg.instances[1]);
    let ok = fast_path > fast_iid
        && slow_path > slow_iid
        && (slow_path / slow_iid) > (fast_path / fast_iid)
        && (slow_path - slow_iid) > (fast_path - fast_iid);
    report(
        5,
        ok,
        Duration::from_secs(15 * 60),
        start,
        format!(
            "fast mixing path {fast_path:.3e} vs iid {fast_iid:.3e}; slow mixing path {slow_path:.3e} vs iid {slow_iid:.3e}"
        ),
    );
}

#[test]
fn criterion_06_longer_lookahead_helps_slow_mixing() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let mut cfg = figure_preset("fig2b", false).unwrap();
    let sizes = cfg.sizes();
    cfg.sample_sizes = sizes[sizes.len() - 2..].to_vec();
    let res = run_experiment(&cfg).unwrap();
    let inst = cfg.instances[0];
    let mut ok = true;
    let mut detail = Vec::new();
    for &n in &cfg.sample_sizes {
        let m: Vec<f64> = [1, 5, 10]
            .iter()
            .map(|&k| {
                mse(
                    &res,
                    &key(inst.tau, inst.theta, ModeSpec::Path, WeightSpec::KStep(k)),
                    n,
                )
            })
            .collect();
        ok &= m[2] < m[1] && m[1] < m[0];
        detail.push(format!(
            "n={n}: K=1 {:.3e}, K=5 {:.3e}, K=10 {:.3e}",
            m[0], m[1], m[2]
        ));
    }
    report(
        6,
        ok,
        Duration::from_secs(15 * 60),
        start,
        detail.join("; "),
    );
}

#[test]
fn criterion_07_rate_slope_matches_polynomial_decay() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let mut cfg = figure_preset("fig1a", false).unwrap();
    cfg.instances.truncate(1);
    cfg.modes = vec![ModeSpec::Path];
    let res = run_experiment(&cfg).unwrap();
    let inst = cfg.instances[0];
    let label = key(inst.tau, inst.theta, ModeSpec::Path, WeightSpec::KStep(1)).to_string();
    let slope = fit_loglog_slope(&res.rows, &label, 0).unwrap();
    let truncated: usize = res.truncated.iter().sum();
    report(
        7,
        (-0.86..=-0.56).contains(&slope) && truncated == 0,
        Duration::from_secs(15 * 60),
        start,
        format!(
            "slope {slope:.3} (window [-0.86, -0.56], target -0.706), {truncated} capped errors"
        ),
    );
}

#[test]
fn criterion_08_lower_bound_certificates() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let gamma = 0.9;
    let params = LbParams::with_midpoint(1.0, 2.0 / (1.0 - gamma), gamma, 1e4, 8);
    let family = HardFamily::new(params).unwrap();
    let certs = family.certify().unwrap();
    let get = |name: &str| {
        certs
            .iter()
            .find(|c| c.name == name)
            .unwrap_or_else(|| panic!("{name}"))
    };
    let required = [
        "local_stationarity_residual",
        "full_stationarity_residual",
        "density_ratio_min",
        "density_ratio_max",
        "kl_trajectory_bound",
        "minorization_slack",
        "value_gap_ratio_min",
        "value_gap_ratio_max",
        "eigendecomposition_residual",
    ];
    let failed: Vec<&str> = certs
        .iter()
        .filter(|c| !c.passed)
        .map(|c| c.name.as_str())
        .collect();
    let ok = failed.is_empty() && required.iter().all(|n| get(n).passed);
    report(
        8,
        ok,
        Duration::from_secs(60),
        start,
        format!(
            "M = {}, KL {:.3} <= {:.3}, gap ratio in [{:.3}, {:.3}], eigen residual {:.1e}, failed {:?}",
            family.size(),
            get("kl_trajectory_bound").value,
            get("kl_trajectory_bound").limit,
            get("value_gap_ratio_min").value,
            get("value_gap_ratio_max").value,
            get("eigendecomposition_residual").value,
            failed
        ),
    );
}

#[test]
fn criterion_09_noise_functional_inequalities() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let (mut fluct, mut resid) = (f64::INFINITY, f64::INFINITY);
    for _ in 0..100 {
        let tau = rng.random_range(1.0..500.0);
        let theta = rng.random_range(0.0..PI / 2.0);
        let gamma = rng.random_range(0.3..0.99);
        let w = random_weights(&mut rng, 10);
        let mrp = build_experiment_mrp(tau, theta, rng.random_range(0.1..5.0), gamma).unwrap();
        let spec = if rng.random_bool(0.5) {
            KernelSpec::poly(rng.random_range(1.1..3.0), rng.random_range(1..=64), theta).unwrap()
        } else {
            KernelSpec::exponential(rng.random_range(1..=8), theta).unwrap()
        };
        let grid = mrp.discretize(spec.grid_size()).unwrap();
        let b = check_sigma_bounds(&noise_report(&grid, &spec, &w, None).unwrap());
        fluct = fluct.min(b.fluctuation);
        resid = resid.min(b.residual);
    }
    report(
        9,
        fluct >= -1e-10 && resid >= -1e-10,
        Duration::from_secs(60),
        start,
        format!("min slack: variance bound {fluct:.2e}, residual bound {resid:.2e}"),
    );
}

#[test]
fn criterion_10_critical_radius_finite_rank_closed_form() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let (radius, kappa, zeta) = (3.0, 2.0, 1.5);
    let mut worst: f64 = 0.0;
    for d in [1usize, 2, 5, 10, 20] {
        let eigs = vec![1.0; d];
        let upper = 2.0 * (d as f64).sqrt();
        for n in [1e3, 3e3, 1e4, 3e4, 1e5] {
            let got = critical_radius(&eigs, n, radius, kappa, zeta, upper).unwrap();
            let want = finite_rank_radius(d, n, radius, kappa, zeta);
            worst = worst.max((got - want).abs() / want);
        }
    }
    report(
        10,
        worst < 1e-8,
        Duration::from_secs(1),
        start,
        format!("max relative error {worst:.2e}"),
    );
}
