//! Forward kernel LSTD on one trajectory, solved in kernel and in feature coordinates.
//!
//! Run with `cargo run --release --example forward_lstd`.

use kernel_td::estimator::{
    build_feature_system, build_kernel_matrices, l2mu_error, make_td_lambda_weights,
    solve_features, solve_lstd,
};
use kernel_td::mrp::build_experiment_mrp;
use kernel_td::oracle::projected_fixed_point;
use kernel_td::rkhs::KernelSpec;

fn main() -> kernel_td::Result<()> {
    let theta = std::f64::consts::PI / 16.0;
    let mrp = build_experiment_mrp(5.0, theta, 1.0, 0.9)?;
    let spec = KernelSpec::poly(1.2, 32, theta)?;
    let w = make_td_lambda_weights(4, 0.5)?;
    let data = mrp.sample_single_path(400, 3);
    let ridge = 1e-3;

    let kernel = solve_lstd(&build_kernel_matrices(&data, &mrp, &spec, &w)?, ridge)?;
    let feature = solve_features(&build_feature_system(&data, &mrp, &spec, &w)?, ridge)?;

    let grid = mrp.discretize(spec.grid_size())?;
    let target = projected_fixed_point(&grid, &spec, &w)?;
    let a = kernel.grid_values(grid.size())?;
    let b = feature.grid_values(grid.size())?;
    println!(
        "kernel vs feature path: {:.2e}",
        l2mu_error(&a, &b, grid.weights())?
    );
    println!(
        "squared error to the fixed point: {:.4e}",
        l2mu_error(&b, &target.values, grid.weights())?
    );
    println!("estimate at x = 0.1: {:.4}", kernel.evaluate_kernel(0.1)?);
    Ok(())
}
