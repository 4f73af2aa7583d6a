//! Trains a small network on one degraded texture phantom and compares the
//! restoration with the degraded input.
//!
//! `cargo run --release --example train_phantom -- [steps] [base_features] [patch] [batch]`

use std::env;

use ssdeconv::degradation::{degrade, DegradeConfig};
use ssdeconv::inference::{predict, TileConfig};
use ssdeconv::metrics::{psnr, rmse};
use ssdeconv::model::NormKind;
use ssdeconv::phantom::PhantomSpec;
use ssdeconv::psf::gaussian_psf;
use ssdeconv::trainer::{train, TrainConfig};

fn arg(i: usize, default: usize) -> usize {
    env::args().nth(i).and_then(|s| s.parse().ok()).unwrap_or(default)
}

fn main() -> ssdeconv::error::Result<()> {
    env_logger::init();
    let clean = PhantomSpec::Texture { shape: vec![256, 256] }.generate(0)?;
    let psf = gaussian_psf(2, 17, 2.0)?;
    let noisy = degrade(&clean, &psf, &DegradeConfig::paper_2d(1))?;

    let mut cfg = TrainConfig::default_for(2);
    cfg.total_steps = arg(1, 300) as u64;
    cfg.network = cfg.network.with_base_features(arg(2, 16));
    cfg.network.norm = NormKind::Batch;
    cfg.patch_size = arg(3, 64);
    cfg.batch_size = arg(4, 8);
    cfg.lr_decay_every = cfg.total_steps.div_ceil(3).max(1);
    cfg.log_every = 50;

    let out = train(&noisy, &psf, &cfg, None)?;
    for row in &out.log {
        println!("step {:>5}  {}", row.step, row.loss);
    }
    let model = &out.checkpoint.model;
    let pred = predict(model, &noisy, &out.checkpoint.stats, &TileConfig::disabled())?;

    let (p_in, p_out) = (psnr(&noisy, &clean, 1.0)?, psnr(&pred.image, &clean, 1.0)?);
    println!("train {:.1}s, predict {:.0} ms", out.seconds, pred.elapsed_ms);
    println!("input    psnr {p_in:.2} dB  rmse {:.4}", rmse(&noisy, &clean)?);
    println!("restored psnr {p_out:.2} dB  rmse {:.4}", rmse(&pred.image, &clean)?);
    Ok(())
}
