//! Simulates an observation and reports how far each stage moves it from
//! the clean image.

use ssdeconv::degradation::{add_gaussian, add_poisson, add_salt_pepper, blur, quantize, DegradeConfig};
use ssdeconv::metrics::{psnr, rmse};
use ssdeconv::phantom::PhantomSpec;
use ssdeconv::psf::gaussian_psf;
use ssdeconv::tensor::SeededRng;

fn main() -> ssdeconv::error::Result<()> {
    let clean = PhantomSpec::Texture { shape: vec![256, 256] }.generate(0)?;
    let psf = gaussian_psf(2, 17, 2.0)?;
    let cfg = DegradeConfig::paper_2d(1);
    let mut rng = SeededRng::new(cfg.seed);

    let blurred = blur(&clean, &psf)?;
    let poisson = add_poisson(&blurred, cfg.poisson_alpha, &mut rng)?;
    let gaussian = add_gaussian(&poisson, cfg.gaussian_sigma, &mut rng)?;
    let sp = add_salt_pepper(&gaussian, cfg.sp_prob, &mut rng)?;
    let quantized = quantize(&sp, cfg.quant_bits)?;

    println!("{:<16} {:>8} {:>8}", "stage", "PSNR", "RMSE");
    for (name, img) in [
        ("blur", &blurred),
        ("+ poisson", &poisson),
        ("+ gaussian", &gaussian),
        ("+ salt/pepper", &sp),
        ("quantized", &quantized),
    ] {
        println!("{name:<16} {:>8.2} {:>8.4}", psnr(img, &clean, 1.0)?, rmse(img, &clean)?);
    }
    Ok(())
}
