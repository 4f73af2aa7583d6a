//! Lucy–Richardson on a noisy and on a noiseless observation: noise makes
//! early stopping pay off, while the noiseless error keeps falling.

use ssdeconv::baselines::lr_sweep;
use ssdeconv::degradation::{degrade, DegradeConfig};
use ssdeconv::metrics::Metric;
use ssdeconv::phantom::PhantomSpec;
use ssdeconv::psf::gaussian_psf;

fn main() -> ssdeconv::error::Result<()> {
    let clean = PhantomSpec::Texture { shape: vec![256, 256] }.generate(0)?;
    let psf = gaussian_psf(2, 17, 2.0)?;
    let ns = [1, 2, 5, 10, 20, 50];
    for (name, cfg) in [("noisy", DegradeConfig::paper_2d(1)), ("noiseless", DegradeConfig::noiseless(1))] {
        let y = degrade(&clean, &psf, &cfg)?;
        println!("{name}");
        for row in lr_sweep(&y, &psf, &ns, &clean)? {
            println!(
                "  n={:<3} PSNR {:6.2}  RMSE {:.4}  {:7.1} ms",
                row.iterations,
                row.metrics.get(Metric::Psnr).unwrap(),
                row.metrics.get(Metric::Rmse).unwrap(),
                row.elapsed_ms
            );
        }
    }
    Ok(())
}
