//! Generates both phantom kinds and writes them as NPY files.
//!
//! `cargo run --release --example phantoms -- [out_dir]`

use std::path::PathBuf;

use ssdeconv::io::write_image;
use ssdeconv::phantom::{mean_abs_gradient, PhantomSpec};

fn main() -> ssdeconv::error::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "phantoms".into()));
    let specs = [
        ("texture", PhantomSpec::Texture { shape: vec![256, 256] }),
        ("microtubules", PhantomSpec::Microtubules { shape: vec![64, 96, 96], n_fibers: 40 }),
    ];
    for (name, spec) in specs {
        let img = spec.generate(0)?;
        let fg = img.as_slice().iter().filter(|&&v| v > 0.0).count() as f64 / img.len() as f64;
        let (lo, hi) = img.min_max();
        println!(
            "{name:<13} shape {:?}  range [{lo:.3}, {hi:.3}]  nonzero {:.2}%  mean |grad| {:.4}",
            img.shape(),
            100.0 * fg,
            mean_abs_gradient(&img)
        );
        write_image(out.join(format!("{name}.npy")), &img)?;
    }
    Ok(())
}
