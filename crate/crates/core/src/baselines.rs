//! Lucy–Richardson multiplicative deconvolution.

use std::time::Instant;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fftconv::{ConvBackend, Convolver, Padding};
use crate::metrics::{evaluate_pair, MetricRow};
use crate::psf::PsfKernel;
use crate::tensor::Image;

/// Guards the division by the re-blurred estimate.
pub const LR_EPS: f32 = 1e-12;

/// Iterator state of Lucy–Richardson on one observation.
pub struct LucyRichardson {
    y: Vec<f32>,
    x: Vec<f32>,
    shape: Vec<usize>,
    value_range: (f32, f32),
    blur: Convolver,
    blur_t: Convolver,
    iterations: usize,
}

impl LucyRichardson {
    /// Starts from `x0 = y`; negative observations are clipped to 0.
    pub fn new(y: &Image, psf: &PsfKernel, padding: Padding) -> Result<Self> {
        if y.ndim() != psf.ndim() {
            return Err(Error::DimMismatch {
                image: y.ndim(),
                kernel: psf.ndim(),
            });
        }
        let (lo, _) = y.min_max();
        let y = if lo < 0.0 {
            warn!("lucy-richardson: clipping negative observations (min {lo}) to 0");
            y.clip(0.0, f32::INFINITY)
        } else {
            y.clone()
        };
        let data = y.as_slice().to_vec();
        Ok(Self {
            x: data.clone(),
            y: data,
            shape: y.shape().to_vec(),
            value_range: y.value_range(),
            blur: Convolver::new(psf.clone(), ConvBackend::Auto, padding),
            blur_t: Convolver::new(psf.flipped(), ConvBackend::Auto, padding),
            iterations: 0,
        })
    }

    /// Restarts from a given estimate.
    pub fn with_start(mut self, x0: &Image) -> Result<Self> {
        if x0.shape() != self.shape.as_slice() {
            return Err(Error::Shape("start estimate must match the observation".into()));
        }
        self.x = x0.as_slice().iter().map(|v| v.max(0.0)).collect();
        self.iterations = 0;
        Ok(self)
    }

    fn array(&self, v: Vec<f32>) -> ndarray::ArrayD<f32> {
        ndarray::ArrayD::from_shape_vec(ndarray::IxDyn(&self.shape), v).expect("shape preserved")
    }

    /// `x <- x * K^T(y / (K x + eps))`.
    pub fn step(&mut self) -> Result<()> {
        let est = self.blur.apply(&self.array(self.x.clone()))?;
        let ratio: Vec<f32> = est
            .iter()
            .zip(&self.y)
            .map(|(&e, &y)| y / (e + LR_EPS))
            .collect();
        let corr = self.blur_t.apply(&self.array(ratio))?;
        for (x, &c) in self.x.iter_mut().zip(corr.iter()) {
            *x = (*x * c).max(0.0);
        }
        self.iterations += 1;
        Ok(())
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn estimate(&self) -> Result<Image> {
        Image::with_range(self.array(self.x.clone()), self.value_range)
    }
}

/// `n` iterations from `x0 = y`, reflect padding.
pub fn lucy_richardson(y: &Image, psf: &PsfKernel, n: usize) -> Result<Image> {
    if n < 1 {
        return Err(Error::InvalidArgument("need at least one iteration".into()));
    }
    let mut lr = LucyRichardson::new(y, psf, Padding::Reflect)?;
    for _ in 0..n {
        lr.step()?;
    }
    lr.estimate()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrRow {
    pub iterations: usize,
    pub metrics: MetricRow,
    /// Cumulative time to reach this iteration count.
    pub elapsed_ms: f64,
}

/// Metrics of the estimate after each count in `ns`. Runs one iteration
/// sequence up to `max(ns)`, which gives the same estimates as separate runs.
pub fn lr_sweep(y: &Image, psf: &PsfKernel, ns: &[usize], clean: &Image) -> Result<Vec<LrRow>> {
    if ns.is_empty() || ns.contains(&0) {
        return Err(Error::InvalidArgument("iteration counts must be non-empty and >= 1".into()));
    }
    let mut order: Vec<usize> = ns.to_vec();
    order.sort_unstable();
    order.dedup();
    let start = Instant::now();
    let mut lr = LucyRichardson::new(y, psf, Padding::Reflect)?;
    let mut rows = Vec::with_capacity(order.len());
    for &n in &order {
        while lr.iterations() < n {
            lr.step()?;
        }
        let elapsed_ms = start.elapsed().as_secs_f64() * 1e3;
        let est = lr.estimate()?.clip(0.0, 1.0);
        rows.push(LrRow {
            iterations: n,
            metrics: evaluate_pair(&est, clean)?,
            elapsed_ms,
        });
    }
    // Report in the caller's order.
    Ok(ns
        .iter()
        .map(|n| rows.iter().find(|r| r.iterations == *n).cloned().expect("computed above"))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::degradation::blur;
    use crate::metrics::{rmse, Metric};
    use crate::psf::gaussian_psf;
    use crate::tensor::SeededRng;
    use ndarray::{ArrayD, IxDyn};
    use rand::Rng;

    #[test]
    fn delta_kernel_is_a_fixed_point() {
        let mut rng = SeededRng::new(1);
        let y = Image::new(ArrayD::from_shape_fn(IxDyn(&[20, 24]), |_| rng.gen::<f32>())).unwrap();
        let k = PsfKernel::delta(2, 3).unwrap();
        for n in [1, 5] {
            let x = lucy_richardson(&y, &k, n).unwrap();
            let err = x.as_slice().iter().zip(y.as_slice()).map(|(a, b)| (a - b).abs()).fold(0f32, f32::max);
            assert!(err < 1e-6);
        }
    }

    #[test]
    fn zero_observation_stays_zero() {
        let y = Image::zeros(&[16, 16]).unwrap();
        let x = lucy_richardson(&y, &gaussian_psf(2, 5, 1.0).unwrap(), 3).unwrap();
        assert!(x.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn noiseless_ramp_converges() {
        // A 1-pixel-tall 2D image holds a 1D ramp; the kernel is a 3-tap blur.
        let truth = Image::new(ArrayD::from_shape_fn(IxDyn(&[1, 64]), |i| 0.1 + 0.8 * i[1] as f32 / 63.0)).unwrap();
        let k = PsfKernel::normalize(ArrayD::from_shape_vec(IxDyn(&[1, 3]), vec![0.25, 0.5, 0.25]).unwrap())
            .unwrap()
            .0;
        let y = blur(&truth, &k).unwrap();
        let early = rmse(&lucy_richardson(&y, &k, 2).unwrap(), &truth).unwrap();
        let late = rmse(&lucy_richardson(&y, &k, 50).unwrap(), &truth).unwrap();
        assert!(late < early, "{late} vs {early}");
    }

    #[test]
    fn fixed_point_when_started_at_truth() {
        let mut rng = SeededRng::new(2);
        let truth = Image::new(ArrayD::from_shape_fn(IxDyn(&[24, 24]), |_| 0.2 + 0.6 * rng.gen::<f32>())).unwrap();
        let k = gaussian_psf(2, 5, 1.0).unwrap();
        let y = blur(&truth, &k).unwrap();
        // With reflect padding a unit ratio field correlates back to exactly 1.
        let mut lr = LucyRichardson::new(&y, &k, Padding::Reflect).unwrap().with_start(&truth).unwrap();
        lr.step().unwrap();
        let x1 = lr.estimate().unwrap();
        let err = x1.as_slice().iter().zip(truth.as_slice()).map(|(a, b)| (a - b).abs()).fold(0f32, f32::max);
        assert!(err < 1e-5, "{err}");
        // Zero padding only keeps the interior fixed: K^T 1 falls off at the border.
        let conv = Convolver::new(k.clone(), ConvBackend::Direct, Padding::Zero);
        let y_zero = Image::new(conv.apply(truth.data()).unwrap()).unwrap();
        let mut lr = LucyRichardson::new(&y_zero, &k, Padding::Zero).unwrap().with_start(&truth).unwrap();
        lr.step().unwrap();
        let x1 = lr.estimate().unwrap();
        for i in 2..22 {
            for j in 2..22 {
                assert!((x1.data()[[i, j]] - truth.data()[[i, j]]).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn flux_is_nearly_conserved_for_interior_signals() {
        let mut truth = ArrayD::<f32>::zeros(IxDyn(&[48, 48]));
        for i in 16..32 {
            for j in 18..30 {
                truth[[i, j]] = 0.5 + 0.02 * ((i + j) % 7) as f32;
            }
        }
        let truth = Image::new(truth).unwrap();
        let k = gaussian_psf(2, 7, 1.2).unwrap();
        let y = blur(&truth, &k).unwrap();
        let total = |img: &Image| img.as_slice().iter().map(|&v| v as f64).sum::<f64>();
        for (pad, tol) in [(Padding::Zero, 0.01), (Padding::Reflect, 0.02)] {
            let mut lr = LucyRichardson::new(&y, &k, pad).unwrap();
            for _ in 0..10 {
                lr.step().unwrap();
                let rel = (total(&lr.estimate().unwrap()) / total(&y) - 1.0).abs();
                assert!(rel < tol, "{pad:?}: relative flux change {rel}");
            }
        }
    }

    #[test]
    fn sweep_rows_follow_request_order_and_are_deterministic() {
        let mut rng = SeededRng::new(3);
        let clean = Image::new(ArrayD::from_shape_fn(IxDyn(&[32, 32]), |_| rng.gen::<f32>())).unwrap();
        let k = gaussian_psf(2, 5, 1.0).unwrap();
        let y = blur(&clean, &k).unwrap();
        let rows = lr_sweep(&y, &k, &[5, 2, 10, 20], &clean).unwrap();
        assert_eq!(rows.iter().map(|r| r.iterations).collect::<Vec<_>>(), vec![5, 2, 10, 20]);
        assert!(rows.iter().all(|r| r.metrics.values.len() == 5));
        let again = lr_sweep(&y, &k, &[5, 2, 10, 20], &clean).unwrap();
        let p = |rs: &[LrRow]| rs.iter().map(|r| r.metrics.get(Metric::Psnr).unwrap()).collect::<Vec<_>>();
        assert_eq!(p(&rows), p(&again));
        let direct = lucy_richardson(&y, &k, 10).unwrap().clip(0.0, 1.0);
        let row10 = evaluate_pair(&direct, &clean).unwrap();
        assert_eq!(row10, rows[2].metrics);
    }
}
