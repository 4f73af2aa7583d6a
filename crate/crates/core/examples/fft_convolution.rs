//! Checks that both convolution backends agree and times them.

use ndarray::{ArrayD, IxDyn};
use rand::Rng;
use ssdeconv::fftconv::{benchmark_conv, choose_backend, convolve, ConvBackend, Padding};
use ssdeconv::psf::gaussian_psf;
use ssdeconv::tensor::SeededRng;

fn main() -> ssdeconv::error::Result<()> {
    let mut rng = SeededRng::new(0);
    let x = ArrayD::from_shape_fn(IxDyn(&[96, 96]), |_| rng.gen::<f32>());
    let k = gaussian_psf(2, 17, 2.0)?;
    for padding in [Padding::Reflect, Padding::Zero] {
        let a = convolve(&x, &k, ConvBackend::Direct, padding)?;
        let b = convolve(&x, &k, ConvBackend::Fft, padding)?;
        let err = a.iter().zip(b.iter()).map(|(p, q)| (p - q).abs()).fold(0f32, f32::max);
        println!("{padding:?}: max |direct - fft| = {err:.2e}");
    }
    for (side, dims) in [(17, 2), (27, 2), (9, 3), (17, 3)] {
        println!("auto backend for side {side}, {dims}D: {:?}", choose_backend(side, dims));
    }
    for side in [9, 17] {
        let r = benchmark_conv(&[48, 48, 48], side, 3)?;
        println!("48^3, {side}^3 kernel: direct {:.1} ms, fft {:.1} ms, speedup {:.1}x", r.direct_ms, r.fft_ms, r.speedup);
    }
    Ok(())
}
