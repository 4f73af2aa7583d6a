//! Runs an experiment file and prints the rendered table.
//!
//! `cargo run --release --example experiment_report -- configs/lr_baselines.toml`

use std::path::PathBuf;

use ssdeconv::experiment::{report_render, run_experiment, Experiment};

fn main() -> ssdeconv::error::Result<()> {
    env_logger::init();
    let path = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "configs/lr_baselines.toml".into()));
    let exp = Experiment::load(&path, None)?;
    let report = run_experiment(&exp)?;
    print!("{}", report_render(&report));
    println!("outputs in {}", exp.output_dir.display());
    Ok(())
}
