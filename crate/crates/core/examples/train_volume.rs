//! Trains a small 3D network on a degraded fiber phantom and compares it with
//! the degraded input and two Lucy–Richardson iterations.
//!
//! `cargo run --release --example train_volume -- [steps] [base_features] [patch] [batch]`

use std::env;

use ssdeconv::baselines::lucy_richardson;
use ssdeconv::degradation::{degrade, DegradeConfig};
use ssdeconv::inference::{predict, TileConfig};
use ssdeconv::metrics::psnr;
use ssdeconv::phantom::PhantomSpec;
use ssdeconv::psf::gaussian_psf;
use ssdeconv::trainer::{train, TrainConfig};
use ssdeconv::losses::LossConfig;

fn arg(i: usize, default: usize) -> usize {
    env::args().nth(i).and_then(|s| s.parse().ok()).unwrap_or(default)
}

fn main() -> ssdeconv::error::Result<()> {
    env_logger::init();
    let clean = PhantomSpec::Microtubules { shape: vec![64, 96, 96], n_fibers: 40 }.generate(0)?;
    let psf = gaussian_psf(3, 9, 1.5)?;
    let noisy = degrade(&clean, &psf, &DegradeConfig::paper_3d(1))?;

    let mut cfg = TrainConfig::default_for(3);
    cfg.total_steps = arg(1, 500) as u64;
    cfg.network = cfg.network.with_base_features(arg(2, 8));
    cfg.patch_size = arg(3, 32);
    cfg.batch_size = arg(4, 2);
    cfg.loss = LossConfig::noise2same();
    cfg.loss.lambda_bound = 0.0;
    cfg.lr_decay_every = cfg.total_steps.div_ceil(3).max(1);
    cfg.log_every = 50;

    let out = train(&noisy, &psf, &cfg, None)?;
    for row in &out.log {
        println!("step {:>5}  {}", row.step, row.loss);
    }
    let pred = predict(&out.checkpoint.model, &noisy, &out.checkpoint.stats, &TileConfig::default_for(3))?;
    let lr2 = lucy_richardson(&noisy, &psf, 2)?.clip(0.0, 1.0);

    println!("train {:.1}s, predict {:.0} ms over {} tiles", out.seconds, pred.elapsed_ms, pred.tiles);
    println!("input    psnr {:.2} dB", psnr(&noisy, &clean, 1.0)?);
    println!("lr n=2   psnr {:.2} dB", psnr(&lr2, &clean, 1.0)?);
    println!("restored psnr {:.2} dB", psnr(&pred.image, &clean, 1.0)?);
    Ok(())
}
