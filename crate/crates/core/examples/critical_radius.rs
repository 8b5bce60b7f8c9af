//! Critical radius, ridge selection and statistical dimension across sample sizes.
//!
//! Run with `cargo run --example critical_radius`.

use kernel_td::rkhs::KernelSpec;
use kernel_td::theory::{
    critical_radius, finite_rank_radius, predicted_slope_poly, select_ridge, statistical_dimension,
    RidgeRule,
};

fn main() -> kernel_td::Result<()> {
    let spec = KernelSpec::poly(1.2, 1024, 0.0)?;
    let (radius, zeta, gamma_bar) = (10.0, 18.0, 0.9);
    println!("n, delta_n, ridge, d_n");
    for n in [1_000.0, 4_000.0, 16_000.0, 64_000.0] {
        let d = critical_radius(spec.eigenvalues(), n, radius, spec.kappa(), zeta, spec.b())?;
        let ridge = select_ridge(d, gamma_bar, n, RidgeRule::Experiment);
        println!(
            "{n}, {d:.4}, {ridge:.3e}, {}",
            statistical_dimension(spec.eigenvalues(), d)
        );
    }
    println!(
        "predicted slope for alpha = 0.6: {:.4}",
        predicted_slope_poly(0.6)
    );

    let eigs = vec![1.0; 10];
    let got = critical_radius(&eigs, 5e3, 3.0, 2.0, 1.5, 10.0)?;
    println!(
        "finite rank: bisection {got:.8}, closed form {:.8}",
        finite_rank_radius(10, 5e3, 3.0, 2.0, 1.5)
    );
    Ok(())
}
