//! Synthetic forward model: PSF blur, a Poisson / Gaussian / salt-and-pepper
//! noise mixture, then quantization.

use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fftconv::{ConvBackend, Convolver, Padding};
use crate::psf::PsfKernel;
use crate::tensor::{Image, SeededRng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DegradeConfig {
    /// Count scale: pixels become `alpha * Poisson(v / alpha)`.
    pub poisson_alpha: f64,
    pub gaussian_sigma: f64,
    /// Salt-and-pepper probability; must be 0 for 3D images.
    pub sp_prob: f64,
    pub quant_bits: u32,
    pub seed: u64,
}

impl Default for DegradeConfig {
    fn default() -> Self {
        Self::paper_2d(0)
    }
}

impl DegradeConfig {
    /// Poisson 0.001, Gaussian 0.1, salt-and-pepper 0.01, 10 bits.
    pub fn paper_2d(seed: u64) -> Self {
        Self {
            poisson_alpha: 0.001,
            gaussian_sigma: 0.1,
            sp_prob: 0.01,
            quant_bits: 10,
            seed,
        }
    }

    /// The 2D settings without salt-and-pepper.
    pub fn paper_3d(seed: u64) -> Self {
        Self {
            sp_prob: 0.0,
            ..Self::paper_2d(seed)
        }
    }

    /// No noise, 16-bit quantization.
    pub fn noiseless(seed: u64) -> Self {
        Self {
            poisson_alpha: 0.0,
            gaussian_sigma: 0.0,
            sp_prob: 0.0,
            quant_bits: 16,
            seed,
        }
    }

    pub fn validate(&self, dims: usize) -> Result<()> {
        if !(self.poisson_alpha >= 0.0) || !(self.gaussian_sigma >= 0.0) {
            return Err(Error::InvalidArgument("noise levels must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.sp_prob) {
            return Err(Error::InvalidArgument(format!(
                "sp_prob must be in [0, 1], got {}",
                self.sp_prob
            )));
        }
        if self.quant_bits < 1 || self.quant_bits > 24 {
            return Err(Error::InvalidArgument(format!(
                "quant_bits must be in 1..=24, got {}",
                self.quant_bits
            )));
        }
        if dims == 3 && self.sp_prob > 0.0 {
            return Err(Error::SaltPepper3d);
        }
        Ok(())
    }
}

/// Same-shape convolution with reflect padding.
pub fn blur(img: &Image, psf: &PsfKernel) -> Result<Image> {
    if img.ndim() != psf.ndim() {
        return Err(Error::DimMismatch {
            image: img.ndim(),
            kernel: psf.ndim(),
        });
    }
    let conv = Convolver::new(psf.clone(), ConvBackend::Auto, Padding::Reflect);
    Image::with_range(conv.apply(img.data())?, img.value_range())
}

fn clip_unit(img: &Image, what: &str) -> Image {
    let (lo, hi) = img.min_max();
    if lo < 0.0 || hi > 1.0 {
        log::warn!("{what}: input outside [0, 1] ({lo}, {hi}); clipping");
        img.clip(0.0, 1.0)
    } else {
        img.clone()
    }
}

/// `alpha * Poisson(v / alpha)` per pixel; mean-preserving with variance
/// `alpha * v`.
pub fn add_poisson(img: &Image, alpha: f64, rng: &mut SeededRng) -> Result<Image> {
    if !(alpha >= 0.0) {
        return Err(Error::InvalidArgument(format!("alpha must be >= 0, got {alpha}")));
    }
    if alpha == 0.0 {
        return Ok(img.clone());
    }
    let img = clip_unit(img, "add_poisson");
    let mut out = img.data().clone();
    out.mapv_inplace(|v| {
        let lambda = v as f64 / alpha;
        if lambda <= 0.0 {
            0.0
        } else {
            let k: f64 = Poisson::new(lambda).expect("lambda > 0").sample(rng);
            (alpha * k) as f32
        }
    });
    Image::with_range(out, img.value_range())
}

pub fn add_gaussian(img: &Image, sigma: f64, rng: &mut SeededRng) -> Result<Image> {
    if !(sigma >= 0.0) {
        return Err(Error::InvalidArgument(format!("sigma must be >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(img.clone());
    }
    let normal = Normal::new(0.0, sigma).expect("sigma > 0");
    let mut out = img.data().clone();
    out.mapv_inplace(|v| (v as f64 + normal.sample(rng)) as f32);
    Image::with_range(out, img.value_range())
}

/// Sets each pixel to 0 or 1 (equal odds) with probability `p`.
pub fn add_salt_pepper(img: &Image, p: f64, rng: &mut SeededRng) -> Result<Image> {
    if img.ndim() != 2 {
        return Err(Error::SaltPepper3d);
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!("p must be in [0, 1], got {p}")));
    }
    if p == 0.0 {
        return Ok(img.clone());
    }
    let mut out = img.data().clone();
    out.mapv_inplace(|v| {
        if rng.gen::<f64>() < p {
            if rng.gen::<bool>() {
                1.0
            } else {
                0.0
            }
        } else {
            v
        }
    });
    Image::with_range(out, img.value_range())
}

/// Clips to `[0, 1]` and rounds to `2^bits - 1` uniform levels.
pub fn quantize(img: &Image, bits: u32) -> Result<Image> {
    if bits < 1 || bits > 24 {
        return Err(Error::InvalidArgument(format!("bits must be in 1..=24, got {bits}")));
    }
    let levels = ((1u64 << bits) - 1) as f64;
    let mut out = img.data().clone();
    out.mapv_inplace(|v| ((v.clamp(0.0, 1.0) as f64 * levels).round() / levels) as f32);
    Image::with_range(out, img.value_range())
}

/// Blur, Poisson, Gaussian, salt-and-pepper (2D only), quantize; each noise
/// stage draws from its own stream derived from `cfg.seed`.
pub fn degrade(img: &Image, psf: &PsfKernel, cfg: &DegradeConfig) -> Result<Image> {
    cfg.validate(img.ndim())?;
    let blurred = blur(&clip_unit(img, "degrade"), psf)?;
    let mut rng = SeededRng::derive(cfg.seed, "degrade/poisson", &[]);
    let noisy = add_poisson(&blurred.clip(0.0, 1.0), cfg.poisson_alpha, &mut rng)?;
    let mut rng = SeededRng::derive(cfg.seed, "degrade/gaussian", &[]);
    let noisy = add_gaussian(&noisy, cfg.gaussian_sigma, &mut rng)?;
    let noisy = if img.ndim() == 2 {
        let mut rng = SeededRng::derive(cfg.seed, "degrade/salt-pepper", &[]);
        add_salt_pepper(&noisy, cfg.sp_prob, &mut rng)?
    } else {
        noisy
    };
    quantize(&noisy, cfg.quant_bits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::psf::gaussian_psf;
    use ndarray::{ArrayD, IxDyn};

    fn random_image(shape: &[usize], seed: u64) -> Image {
        let mut rng = SeededRng::new(seed);
        Image::new(ArrayD::from_shape_fn(IxDyn(shape), |_| rng.gen::<f32>())).unwrap()
    }

    fn moments(values: &[f32]) -> (f64, f64) {
        let n = values.len() as f64;
        let mean = values.iter().map(|&v| v as f64).sum::<f64>() / n;
        let var = values.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, var)
    }

    #[test]
    fn blur_with_delta_is_identity() {
        let img = random_image(&[20, 24], 1);
        let out = blur(&img, &PsfKernel::delta(2, 7).unwrap()).unwrap();
        for (a, b) in out.as_slice().iter().zip(img.as_slice()) {
            assert!((a - b).abs() <= 1e-5);
        }
    }

    #[test]
    fn blur_preserves_constants_and_mean() {
        let k = gaussian_psf(2, 9, 2.0).unwrap();
        let c = Image::filled(&[16, 16], 0.42).unwrap();
        assert!(blur(&c, &k).unwrap().as_slice().iter().all(|&v| (v - 0.42).abs() < 1e-5));
        let img = random_image(&[64, 64], 2);
        let m0 = img.mean();
        let m1 = blur(&img, &k).unwrap().mean();
        assert!((m1 - m0).abs() / m0 < 1e-2);
    }

    #[test]
    fn blur_rejects_dim_mismatch() {
        let img = random_image(&[10, 10], 3);
        let k = gaussian_psf(3, 3, 1.0).unwrap();
        assert!(matches!(blur(&img, &k), Err(Error::DimMismatch { .. })));
    }

    #[test]
    fn poisson_edge_cases() {
        let img = random_image(&[8, 8], 4);
        let mut rng = SeededRng::new(5);
        assert_eq!(add_poisson(&img, 0.0, &mut rng).unwrap(), img);
        let zeros = Image::zeros(&[8, 8]).unwrap();
        assert!(add_poisson(&zeros, 0.001, &mut rng).unwrap().as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn poisson_moments() {
        let img = Image::filled(&[100, 100], 0.5).unwrap();
        let mut rng = SeededRng::new(6);
        let out = add_poisson(&img, 0.001, &mut rng).unwrap();
        let (mean, var) = moments(out.as_slice());
        let n = 1e4;
        assert!((mean - 0.5).abs() <= 3.0 * (0.5f64 * 0.001 / n).sqrt(), "mean {mean}");
        // Var of the sample variance for Poisson ~ 2 sigma^4 / n.
        let expect = 0.001 * 0.5;
        assert!((var - expect).abs() <= 4.0 * expect * (2.0 / n).sqrt(), "var {var}");
    }

    #[test]
    fn gaussian_statistics_and_determinism() {
        let zeros = Image::zeros(&[100, 100]).unwrap();
        let mut rng = SeededRng::new(7);
        assert_eq!(add_gaussian(&zeros, 0.0, &mut rng).unwrap(), zeros);
        let out = add_gaussian(&zeros, 0.1, &mut rng).unwrap();
        let std = moments(out.as_slice()).1.sqrt();
        assert!((0.097..=0.103).contains(&std), "std {std}");
        let a = add_gaussian(&zeros, 0.1, &mut SeededRng::new(8)).unwrap();
        let b = add_gaussian(&zeros, 0.1, &mut SeededRng::new(8)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn salt_pepper_statistics() {
        let img = Image::filled(&[512, 512], 0.5).unwrap();
        let mut rng = SeededRng::new(9);
        assert_eq!(add_salt_pepper(&img, 0.0, &mut rng).unwrap(), img);
        let all = add_salt_pepper(&img, 1.0, &mut rng).unwrap();
        assert!(all.as_slice().iter().all(|&v| v == 0.0 || v == 1.0));
        let some = add_salt_pepper(&img, 0.01, &mut rng).unwrap();
        let frac = some.as_slice().iter().filter(|&&v| v != 0.5).count() as f64 / (512.0 * 512.0);
        assert!((0.007..=0.013).contains(&frac), "fraction {frac}");
        let vol = Image::filled(&[4, 4, 4], 0.5).unwrap();
        assert!(matches!(add_salt_pepper(&vol, 0.01, &mut rng), Err(Error::SaltPepper3d)));
    }

    #[test]
    fn quantize_formula_and_idempotence() {
        let img = Image::new(ArrayD::from_elem(IxDyn(&[2, 2]), 0.5)).unwrap();
        let q = quantize(&img, 10).unwrap();
        assert_eq!(q.as_slice()[0], (512.0f64 / 1023.0) as f32);
        let r = random_image(&[32, 32], 10);
        let one = quantize(&r, 1).unwrap();
        assert!(one.as_slice().iter().all(|&v| v == 0.0 || v == 1.0));
        let q1 = quantize(&r, 10).unwrap();
        assert_eq!(quantize(&q1, 10).unwrap(), q1);
    }

    #[test]
    fn degrade_identities_and_determinism() {
        let img = random_image(&[32, 32], 11);
        let delta = PsfKernel::delta(2, 3).unwrap();
        let out = degrade(&img, &delta, &DegradeConfig::noiseless(1)).unwrap();
        for (a, b) in out.as_slice().iter().zip(img.as_slice()) {
            assert!((a - b).abs() <= 1.0 / 65535.0);
        }
        let k = gaussian_psf(2, 5, 1.0).unwrap();
        let cfg = DegradeConfig::paper_2d(3);
        assert_eq!(degrade(&img, &k, &cfg).unwrap(), degrade(&img, &k, &cfg).unwrap());
        let vol = random_image(&[8, 8, 8], 12);
        let k3 = gaussian_psf(3, 3, 1.0).unwrap();
        assert!(degrade(&vol, &k3, &cfg).is_err());
        assert!(degrade(&vol, &k3, &DegradeConfig::paper_3d(3)).is_ok());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn quantize_is_one_lipschitz(seed in any::<u64>(), bits in 1u32..16) {
                let a = random_image(&[6, 7], seed);
                let b = random_image(&[6, 7], seed ^ 0xff);
                let qa = quantize(&a, bits).unwrap();
                let qb = quantize(&b, bits).unwrap();
                let step = 1.0 / ((1u64 << bits) - 1) as f32;
                for i in 0..a.len() {
                    let d_in = (a.as_slice()[i] - b.as_slice()[i]).abs();
                    let d_out = (qa.as_slice()[i] - qb.as_slice()[i]).abs();
                    // Rounding moves each value by at most half a step.
                    prop_assert!(d_out <= d_in + step + 1e-6);
                }
                prop_assert_eq!(quantize(&qa, bits).unwrap(), qa);
            }
        }
    }
}
