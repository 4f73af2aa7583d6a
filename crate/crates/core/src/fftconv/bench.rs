use std::time::Instant;

use ndarray::{ArrayD, IxDyn};
use rand::Rng;
use serde::Serialize;

use super::{ConvBackend, Convolver, Padding};
use crate::error::{Error, Result};
use crate::psf::gaussian_psf;
use crate::tensor::SeededRng;

#[derive(Debug, Clone, Serialize)]
pub struct BenchResult {
    pub shape: Vec<usize>,
    pub kernel_side: usize,
    pub direct_ms: f64,
    pub fft_ms: f64,
    pub speedup: f64,
}

impl BenchResult {
    pub const CSV_HEADER: &'static str = "shape,kernel,direct_ms,fft_ms,speedup";

    pub fn csv_row(&self) -> String {
        let shape: Vec<String> = self.shape.iter().map(|d| d.to_string()).collect();
        let dims = self.shape.len();
        format!(
            "{},{},{:.3},{:.3},{:.3}",
            shape.join("x"),
            vec![self.kernel_side.to_string(); dims].join("x"),
            self.direct_ms,
            self.fft_ms,
            self.speedup
        )
    }
}

/// Median wall time of direct and FFT convolution with a Gaussian kernel.
///
/// Each backend runs once untimed first, so FFT plans and the kernel
/// spectrum are built before timing starts.
pub fn benchmark_conv(image_shape: &[usize], kernel_side: usize, repeats: usize) -> Result<BenchResult> {
    if repeats < 3 {
        return Err(Error::InvalidArgument(format!("need at least 3 repeats, got {repeats}")));
    }
    let dims = image_shape.len();
    let kernel = gaussian_psf(dims, kernel_side, kernel_side as f64 / 6.0)?;
    let mut rng = SeededRng::new(0xbe4c);
    let x = ArrayD::from_shape_fn(IxDyn(image_shape), |_| rng.gen::<f32>());

    let time = |backend: ConvBackend| -> Result<f64> {
        let conv = Convolver::new(kernel.clone(), backend, Padding::Reflect);
        conv.apply(&x)?;
        let mut samples = Vec::with_capacity(repeats);
        for _ in 0..repeats {
            let t = Instant::now();
            let y = conv.apply(&x)?;
            samples.push(t.elapsed().as_secs_f64() * 1e3);
            std::hint::black_box(y);
        }
        samples.sort_by(|a, b| a.total_cmp(b));
        Ok(samples[samples.len() / 2])
    };
    let direct_ms = time(ConvBackend::Direct)?;
    let fft_ms = time(ConvBackend::Fft)?;
    Ok(BenchResult {
        shape: image_shape.to_vec(),
        kernel_side,
        direct_ms,
        fft_ms,
        speedup: direct_ms / fft_ms,
    })
}
