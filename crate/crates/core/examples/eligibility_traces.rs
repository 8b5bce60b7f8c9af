//! Backward (eligibility trace) estimator and its online recursion.
//!
//! Run with `cargo run --release --example eligibility_traces`.

use kernel_td::estimator::make_kstep_weights;
use kernel_td::mrp::build_experiment_mrp;
use kernel_td::rkhs::KernelSpec;
use kernel_td::trace::{sa_run, solve_backward};

fn main() -> kernel_td::Result<()> {
    let mrp = build_experiment_mrp(20.0, 0.2, 1.0, 0.9)?;
    let spec = KernelSpec::poly(1.2, 24, 0.2)?;
    let w = make_kstep_weights(3)?;
    let data = mrp.sample_single_path(1500, 11);
    let ridge = 1e-2;

    let batch = solve_backward(&data, &mrp, &spec, &w, ridge)?;
    let (online, state) = sa_run(&data, &mrp, &spec, &w, ridge)?;
    let gap = (online.coordinates() - batch.coordinates()).norm() / batch.coordinates().norm();
    println!(
        "steps {}, relative gap to the batch solve {gap:.2e}",
        state.t
    );
    println!(
        "largest inverse drift before a refresh {:.2e}",
        state.max_drift
    );
    for x in [0.1, 0.4, 0.6, 0.9] {
        println!("theta({x}) = {:+.4}", online.evaluate(x)?);
    }
    Ok(())
}
