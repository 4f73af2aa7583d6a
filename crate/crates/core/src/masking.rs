//! Blind-spot masks: which pixels are hidden in the masked forward pass and
//! what replaces them.

use rand::seq::index;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Image, SeededRng};

pub const DEFAULT_MASK_FRACTION: f64 = 0.005;
pub const DEFAULT_MASK_SIGMA: f64 = 0.2;

/// How a masked pixel's new value is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskMode {
    /// Original standardized value plus `N(0, sigma^2)`.
    #[default]
    Additive,
    /// Pure `N(0, sigma^2)`, discarding the original value.
    Replace,
}

/// The masked pixel set `J` of one patch.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskSet {
    shape: Vec<usize>,
    /// Unique flat (row-major) indices, ascending.
    indices: Vec<usize>,
    fraction: f64,
    pub noise_sigma: f64,
    pub mode: MaskMode,
}

impl MaskSet {
    /// Builds a mask from explicit flat indices (deduplicated).
    pub fn from_indices(shape: &[usize], mut indices: Vec<usize>, noise_sigma: f64) -> Result<Self> {
        let m: usize = shape.iter().product();
        indices.sort_unstable();
        indices.dedup();
        if indices.is_empty() {
            return Err(Error::EmptyMask);
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= m) {
            return Err(Error::InvalidArgument(format!(
                "mask index {bad} out of range for shape {shape:?}"
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            fraction: indices.len() as f64 / m as f64,
            indices,
            noise_sigma,
            mode: MaskMode::Additive,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// `|J| / m`.
    pub fn fraction(&self) -> f64 {
        self.fraction
    }

    pub fn with_noise(mut self, noise_sigma: f64, mode: MaskMode) -> Self {
        self.noise_sigma = noise_sigma;
        self.mode = mode;
        self
    }

    /// Multi-dimensional coordinates of the masked pixels.
    pub fn coords(&self) -> impl Iterator<Item = Vec<usize>> + '_ {
        self.indices.iter().map(|&flat| {
            let mut rem = flat;
            let mut c = vec![0; self.shape.len()];
            for ax in (0..self.shape.len()).rev() {
                c[ax] = rem % self.shape[ax];
                rem /= self.shape[ax];
            }
            c
        })
    }

    /// Perturbs the masked positions of a flat buffer in place.
    pub fn perturb(&self, values: &mut [f32], rng: &mut SeededRng) -> Result<()> {
        if values.len() != self.shape.iter().product::<usize>() {
            return Err(Error::Shape(format!(
                "buffer of {} values does not match mask shape {:?}",
                values.len(),
                self.shape
            )));
        }
        if self.noise_sigma <= 0.0 {
            if self.mode == MaskMode::Replace {
                for &i in &self.indices {
                    values[i] = 0.0;
                }
            }
            return Ok(());
        }
        let normal = Normal::new(0.0, self.noise_sigma).expect("sigma > 0");
        for &i in &self.indices {
            let noise = normal.sample(rng) as f32;
            values[i] = match self.mode {
                MaskMode::Additive => values[i] + noise,
                MaskMode::Replace => noise,
            };
        }
        Ok(())
    }
}

/// Draws `max(1, round(fraction * m))` distinct pixels uniformly.
pub fn sample_mask(shape: &[usize], fraction: f64, rng: &mut SeededRng) -> Result<MaskSet> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "mask fraction must be in (0, 1), got {fraction}"
        )));
    }
    let m: usize = shape.iter().product();
    if m == 0 {
        return Err(Error::Shape(format!("empty mask shape {shape:?}")));
    }
    let count = ((fraction * m as f64).round() as usize).clamp(1, m);
    let indices = index::sample(rng, m, count).into_vec();
    MaskSet::from_indices(shape, indices, DEFAULT_MASK_SIGMA)
}

/// Copy of `x_std` with the pixels of `mask` perturbed; all other pixels
/// are bitwise unchanged.
pub fn apply_mask(x_std: &Image, mask: &MaskSet, rng: &mut SeededRng) -> Result<Image> {
    if x_std.shape() != mask.shape() {
        return Err(Error::InvalidArgument(format!(
            "mask shape {:?} does not match image {:?}",
            mask.shape(),
            x_std.shape()
        )));
    }
    let mut data = x_std.data().clone();
    mask.perturb(data.as_slice_mut().expect("standard layout"), rng)?;
    Image::with_range(data, x_std.value_range())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mask_sizes() {
        let mut rng = SeededRng::new(1);
        assert_eq!(sample_mask(&[128, 128], 0.005, &mut rng).unwrap().len(), 82);
        assert_eq!(sample_mask(&[64, 64, 64], 0.005, &mut rng).unwrap().len(), 1311);
        let small = sample_mask(&[2, 2], 0.5, &mut rng).unwrap();
        assert_eq!(small.len(), 2);
        assert_ne!(small.indices()[0], small.indices()[1]);
        assert_eq!(sample_mask(&[4, 4], 0.001, &mut rng).unwrap().len(), 1);
    }

    #[test]
    fn fraction_is_validated() {
        let mut rng = SeededRng::new(1);
        for f in [0.0, 1.0, -0.1, 1.5] {
            assert!(sample_mask(&[8, 8], f, &mut rng).is_err());
        }
    }

    #[test]
    fn coords_round_trip() {
        let m = MaskSet::from_indices(&[3, 4, 5], vec![0, 59, 23], 0.2).unwrap();
        let coords: Vec<_> = m.coords().collect();
        assert_eq!(coords, vec![vec![0, 0, 0], vec![1, 0, 3], vec![2, 3, 4]]);
        assert!(MaskSet::from_indices(&[2, 2], vec![4], 0.2).is_err());
        assert!(matches!(MaskSet::from_indices(&[2, 2], vec![], 0.2), Err(Error::EmptyMask)));
    }

    #[test]
    fn unmasked_pixels_are_untouched() {
        let mut rng = SeededRng::new(2);
        let img = Image::with_range(
            ndarray::ArrayD::from_shape_fn(ndarray::IxDyn(&[16, 16]), |i| (i[0] * 16 + i[1]) as f32 * 0.01),
            (0.0, 3.0),
        )
        .unwrap();
        let mask = sample_mask(img.shape(), 0.1, &mut rng).unwrap();
        let out = apply_mask(&img, &mask, &mut rng).unwrap();
        let mut changed = 0;
        for (i, (a, b)) in out.as_slice().iter().zip(img.as_slice()).enumerate() {
            if mask.indices().binary_search(&i).is_ok() {
                changed += (a != b) as usize;
            } else {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
        assert_eq!(changed, mask.len());
    }

    #[test]
    fn zero_sigma_is_identity() {
        let mut rng = SeededRng::new(3);
        let img = Image::filled(&[8, 8], 0.7).unwrap();
        let mask = sample_mask(img.shape(), 0.2, &mut rng).unwrap().with_noise(0.0, MaskMode::Additive);
        assert_eq!(apply_mask(&img, &mask, &mut rng).unwrap(), img);
    }

    #[test]
    fn masked_noise_has_requested_std() {
        let mut rng = SeededRng::new(4);
        let img = Image::zeros(&[200, 200]).unwrap();
        let mask = sample_mask(img.shape(), 0.25, &mut rng).unwrap();
        assert_eq!(mask.len(), 10_000);
        let out = apply_mask(&img, &mask, &mut rng).unwrap();
        let vals: Vec<f64> = mask.indices().iter().map(|&i| out.as_slice()[i] as f64).collect();
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let std = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!((0.194..=0.206).contains(&std), "std {std}");
    }

    #[test]
    fn replace_mode_discards_original() {
        let mut rng = SeededRng::new(5);
        let img = Image::filled(&[10, 10], 50.0).unwrap();
        let mask = sample_mask(img.shape(), 0.1, &mut rng).unwrap().with_noise(0.2, MaskMode::Replace);
        let out = apply_mask(&img, &mask, &mut rng).unwrap();
        for &i in mask.indices() {
            assert!(out.as_slice()[i].abs() < 2.0);
        }
    }

    #[test]
    fn deterministic_under_seed() {
        let a = sample_mask(&[32, 32], 0.05, &mut SeededRng::new(9)).unwrap();
        let b = sample_mask(&[32, 32], 0.05, &mut SeededRng::new(9)).unwrap();
        assert_eq!(a, b);
    }
}
