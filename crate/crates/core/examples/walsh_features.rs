//! Walsh functions, the feature basis and the truncated kernel.
//!
//! Run with `cargo run --example walsh_features`.

use kernel_td::rkhs::{feature, walsh, KernelSpec};

fn main() -> kernel_td::Result<()> {
    for (j, x) in [(0u64, 0.3), (1, 0.25), (1, 0.75), (2, 0.25)] {
        println!("walsh({j}, {x}) = {}", walsh(j, x)?);
    }
    let theta = 0.3;
    let row: Vec<String> = (1..=6)
        .map(|j| feature(j, 0.6, theta).map(|v| format!("{v:+.3}")))
        .collect::<kernel_td::Result<_>>()?;
    println!("features at x = 0.6: {}", row.join(" "));

    let spec = KernelSpec::poly(1.2, 64, theta)?;
    let (x, y) = (0.1, 0.7);
    let dot = spec.feature_map(x)?.dot(&spec.feature_map(y)?);
    println!(
        "K({x}, {y}) = {:.6}, feature-map dot product {dot:.6}",
        spec.kernel_eval(x, y)?
    );
    println!("b = {:.4}, kappa = {}", spec.b(), spec.kappa());

    let m = spec.grid_size();
    let basis = spec.basis_matrix(m)?;
    let gram = basis.transpose() * &basis / m as f64;
    let off = (gram - nalgebra::DMatrix::identity(64, 64)).amax();
    println!("orthonormality defect on {m} cells: {off:.1e}");
    Ok(())
}
