//! A small Monte Carlo comparison of look-ahead lengths, written as CSV.
//!
//! Run with `cargo run --release --example monte_carlo`.

use kernel_td::config::ExperimentConfig;
use kernel_td::harness::{fit_loglog_slope, run_experiment, write_csv};

fn main() -> kernel_td::Result<()> {
    let cfg = ExperimentConfig::from_toml(
        r#"
        name = "lookahead"
        kernel = "exp"
        truncation = 8
        weights = ["k1", "k5", "td10:0.7"]
        sample_sizes = [500, 1000, 2000, 4000]
        trials = 50

        [[instance]]
        tau = 201.7
        theta = 0.19635
        "#,
    )?;
    let res = run_experiment(&cfg)?;
    write_csv(&res.rows, std::io::stdout())?;
    for c in &res.curves {
        let slope = fit_loglog_slope(&res.rows, &c.key.to_string(), 0)?;
        println!("# {}: zeta0 {:.2}, slope {slope:.3}", c.key, c.zeta0);
    }
    Ok(())
}
