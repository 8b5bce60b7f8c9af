//! Builds the hard instance family and prints its certificates.
//!
//! Run with `cargo run --release --example hard_instances`.

use kernel_td::lowerbound::{HardFamily, LbParams};

fn main() -> kernel_td::Result<()> {
    let gamma = 0.9;
    let params = LbParams::with_midpoint(1.0, 2.0 / (1.0 - gamma), gamma, 1e4, 8);
    println!(
        "rho_perp {:.5} in {:?}",
        params.rho_perp,
        params.rho_interval()
    );
    let family = HardFamily::new(params)?;
    println!("family size {}", family.size());
    for c in family.certify()? {
        let op = if c.upper { "<=" } else { ">=" };
        println!(
            "{:<34} {:>12.4e} {op} {:<12.4e} {}",
            c.name,
            c.value,
            c.limit,
            if c.passed { "ok" } else { "FAIL" }
        );
    }
    Ok(())
}
