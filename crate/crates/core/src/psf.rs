//! Point-spread-function kernels: the fixed forward blur of the pipeline.

use std::path::Path;

use ndarray::{ArrayD, Axis, IxDyn};

use crate::error::{Error, Result};
use crate::io;

/// Clipped negative mass above which loading a kernel logs a warning.
pub const CLIP_WARN_MASS: f64 = 1e-3;

/// Non-negative, odd-sided convolution kernel summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct PsfKernel {
    data: ArrayD<f32>,
}

/// What [`PsfKernel::normalize`] had to fix up.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct NormalizeReport {
    /// Total absolute mass of negative entries set to zero, measured
    /// relative to the positive mass.
    pub clipped_mass: f64,
}

impl NormalizeReport {
    pub fn warrants_warning(&self) -> bool {
        self.clipped_mass > CLIP_WARN_MASS
    }
}

impl PsfKernel {
    /// Clips negatives to zero and renormalizes `raw` to unit sum.
    pub fn normalize(raw: ArrayD<f32>) -> Result<(Self, NormalizeReport)> {
        check_kernel_shape(raw.shape())?;
        if let Some(idx) = raw.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(idx));
        }
        let positive: f64 = raw.iter().filter(|&&v| v > 0.0).map(|&v| v as f64).sum();
        let negative: f64 = raw.iter().filter(|&&v| v < 0.0).map(|&v| -v as f64).sum();
        if positive <= 0.0 {
            return Err(Error::Kernel("kernel has no positive mass".into()));
        }
        let data = raw.mapv(|v| (v.max(0.0) as f64 / positive) as f32);
        let report = NormalizeReport {
            clipped_mass: negative / positive,
        };
        Ok((
            Self {
                data: data.as_standard_layout().into_owned(),
            },
            report,
        ))
    }

    /// Wraps an already valid kernel, rejecting anything that violates the
    /// kernel invariants instead of repairing it.
    pub fn from_normalized(data: ArrayD<f32>) -> Result<Self> {
        check_kernel_shape(data.shape())?;
        if data.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(Error::Kernel("kernel entries must be finite and >= 0".into()));
        }
        let sum: f64 = data.iter().map(|&v| v as f64).sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::Kernel(format!("kernel sums to {sum}, expected 1")));
        }
        Ok(Self {
            data: data.as_standard_layout().into_owned(),
        })
    }

    /// Identity kernel of the given odd side.
    pub fn delta(dims: usize, side: usize) -> Result<Self> {
        check_dims(dims)?;
        let shape = vec![side; dims];
        check_kernel_shape(&shape)?;
        let mut data = ArrayD::zeros(IxDyn(&shape));
        data[IxDyn(&vec![side / 2; dims])] = 1.0;
        Ok(Self { data })
    }

    pub fn data(&self) -> &ArrayD<f32> {
        &self.data
    }

    pub fn ndim(&self) -> usize {
        self.data.ndim()
    }

    pub fn shape(&self) -> &[usize] {
        self.data.shape()
    }

    /// Largest side length.
    pub fn side(&self) -> usize {
        self.data.shape().iter().copied().max().unwrap_or(1)
    }

    /// Half-widths `(n - 1) / 2` per axis.
    pub fn radii(&self) -> Vec<usize> {
        self.data.shape().iter().map(|&n| n / 2).collect()
    }

    /// Kernel reversed along every axis (the adjoint blur).
    pub fn flipped(&self) -> Self {
        let mut view = self.data.view();
        for ax in 0..view.ndim() {
            view.invert_axis(Axis(ax));
        }
        Self {
            data: view.as_standard_layout().into_owned(),
        }
    }
}

fn check_dims(dims: usize) -> Result<()> {
    if dims == 2 || dims == 3 {
        Ok(())
    } else {
        Err(Error::Kernel(format!("kernels must be 2D or 3D, got {dims}D")))
    }
}

fn check_kernel_shape(shape: &[usize]) -> Result<()> {
    check_dims(shape.len())?;
    if let Some(&n) = shape.iter().find(|&&n| n % 2 == 0) {
        return Err(Error::Kernel(format!(
            "kernel sides must be odd, got {n} in {shape:?}"
        )));
    }
    Ok(())
}

/// Reads a kernel from a TIFF or NPY file, clipping negatives and
/// renormalizing to unit sum.
pub fn load_psf(path: impl AsRef<Path>) -> Result<PsfKernel> {
    let path = path.as_ref();
    let raw = io::read_array(path)?;
    let (kernel, report) = PsfKernel::normalize(raw).map_err(|e| match e {
        Error::Kernel(msg) => Error::Kernel(format!("{}: {msg}", path.display())),
        other => other,
    })?;
    if report.warrants_warning() {
        log::warn!(
            "{}: clipped negative kernel mass {:.3e}",
            path.display(),
            report.clipped_mass
        );
    }
    Ok(kernel)
}

/// Isotropic sampled Gaussian, centered and normalized to unit sum.
pub fn gaussian_psf(dims: usize, side: usize, sigma: f64) -> Result<PsfKernel> {
    check_dims(dims)?;
    if side < 3 || side % 2 == 0 {
        return Err(Error::Kernel(format!("side must be odd and >= 3, got {side}")));
    }
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::Kernel(format!("sigma must be > 0, got {sigma}")));
    }
    let c = (side / 2) as f64;
    // Separable: the product of 1D profiles is exactly the isotropic form.
    let profile: Vec<f64> = (0..side)
        .map(|i| {
            let d = i as f64 - c;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let shape = vec![side; dims];
    let raw = ArrayD::from_shape_fn(IxDyn(&shape), |idx| {
        (0..dims).map(|ax| profile[idx[ax]]).product::<f64>()
    });
    let total: f64 = raw.iter().sum();
    let data = raw.mapv(|v| (v / total) as f32);
    Ok(PsfKernel { data })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sum(k: &PsfKernel) -> f64 {
        k.data().iter().map(|&v| v as f64).sum()
    }

    #[test]
    fn tiny_sigma_is_a_delta() {
        let k = gaussian_psf(2, 3, 0.01).unwrap();
        assert!((k.data()[[1, 1]] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn gaussian_is_flip_symmetric_and_normalized() {
        for dims in [2, 3] {
            let k = gaussian_psf(dims, 17, 2.0).unwrap();
            assert!((sum(&k) - 1.0).abs() < 1e-6);
            for ax in 0..dims {
                let mut v = k.data().view();
                v.invert_axis(Axis(ax));
                assert_eq!(v, k.data().view());
            }
        }
    }

    #[test]
    fn gaussian_matches_pointwise_formula() {
        let k = gaussian_psf(2, 5, 1.0).unwrap();
        let mut z = 0.0;
        for y in -2i32..=2 {
            for x in -2i32..=2 {
                z += (-((x * x + y * y) as f64) / 2.0).exp();
            }
        }
        for y in -2i32..=2 {
            for x in -2i32..=2 {
                let expect = (-((x * x + y * y) as f64) / 2.0).exp() / z;
                let got = k.data()[[(y + 2) as usize, (x + 2) as usize]] as f64;
                assert!((got - expect).abs() < 1e-7, "({y},{x}): {got} vs {expect}");
            }
        }
    }

    #[test]
    fn gaussian_is_isotropic_under_axis_permutation() {
        let k = gaussian_psf(3, 7, 1.3).unwrap();
        let p = k.data().view().permuted_axes(IxDyn(&[2, 0, 1]));
        for (a, b) in p.iter().zip(k.data().iter()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn gaussian_argument_errors() {
        assert!(gaussian_psf(2, 4, 1.0).is_err());
        assert!(gaussian_psf(2, 1, 1.0).is_err());
        assert!(gaussian_psf(2, 5, 0.0).is_err());
        assert!(gaussian_psf(2, 5, -1.0).is_err());
        assert!(gaussian_psf(4, 5, 1.0).is_err());
    }

    #[test]
    fn normalize_clips_negative_mass() {
        let mut raw = gaussian_psf(2, 5, 1.0).unwrap().data().clone();
        raw[[0, 0]] = -1e-2;
        let (k, report) = PsfKernel::normalize(raw).unwrap();
        assert!(report.warrants_warning());
        assert!(k.data().iter().all(|&v| v >= 0.0));
        assert!((sum(&k) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn normalize_rejects_even_and_zero_kernels() {
        assert!(PsfKernel::normalize(ArrayD::ones(IxDyn(&[4, 5]))).is_err());
        assert!(PsfKernel::normalize(ArrayD::zeros(IxDyn(&[5, 5]))).is_err());
    }

    #[test]
    fn flipped_reverses_every_axis() {
        let raw = ArrayD::from_shape_fn(IxDyn(&[3, 3]), |i| (i[0] * 3 + i[1] + 1) as f32);
        let (k, _) = PsfKernel::normalize(raw).unwrap();
        let f = k.flipped();
        assert_eq!(f.data()[[0, 0]], k.data()[[2, 2]]);
        assert_eq!(f.data()[[0, 2]], k.data()[[2, 0]]);
    }
}
