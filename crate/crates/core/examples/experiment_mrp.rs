//! Builds the two-half chain, discretizes it and samples from it.
//!
//! Run with `cargo run --example experiment_mrp`.

use kernel_td::mrp::{build_experiment_mrp, same_half_density, switch_probability};

fn main() -> kernel_td::Result<()> {
    let tau = 2.0;
    let mrp = build_experiment_mrp(tau, std::f64::consts::PI / 16.0, 1.0, 0.9)?;
    println!("switch probability {:.3}", switch_probability(tau));
    println!("same-half density {:.3}", same_half_density(tau));
    println!("reward per quarter {:?}", mrp.reward_cells());

    let grid = mrp.discretize(8)?;
    println!("row-sum residual {:.1e}", grid.row_sum_residual());
    println!("stationarity residual {:.1e}", grid.stationarity_residual());

    let path = mrp.sample_single_path(100_000, 7);
    println!(
        "lower-half occupancy of a long path {:.4}",
        path.lower_half_fraction()
    );
    let pairs = mrp.sample_iid_pairs(5, 7);
    println!("five iid pairs {:?}", pairs.states());
    Ok(())
}
