//! Loads an experiment configuration and overlays it on a figure preset.
//!
//! Run with `cargo run --example config_file`.

use kernel_td::config::ExperimentConfig;
use kernel_td::harness::figure_preset;

fn main() -> kernel_td::Result<()> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/configs/slow_mixing.toml");
    let cfg = ExperimentConfig::from_file(path.as_ref())?;
    println!(
        "{} with {} weight schemes and sizes {:?}",
        cfg.name,
        cfg.weights.len(),
        cfg.sizes()
    );

    let quick = figure_preset("fig1a", false)?.overlay("trials = 20\nseed = 5")?;
    print!("{}", quick.to_toml()?);
    Ok(())
}
