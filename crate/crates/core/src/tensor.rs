//! Shared value types: intensity images, normalization statistics and the
//! seeded random stream every stochastic stage draws from.

use ndarray::{ArrayD, Dimension, IxDyn, Zip};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A single-channel 2D or 3D intensity grid.
///
/// Values are always finite. `value_range` is the nominal range the data
/// is expected to live in (for the synthetic pipeline this is `[0, 1]`);
/// it is metadata and is not enforced.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    data: ArrayD<f32>,
    value_range: (f32, f32),
}

impl Image {
    /// Wraps `data` with the default nominal range `[0, 1]`.
    pub fn new(data: ArrayD<f32>) -> Result<Self> {
        Self::with_range(data, (0.0, 1.0))
    }

    pub fn with_range(data: ArrayD<f32>, value_range: (f32, f32)) -> Result<Self> {
        let ndim = data.ndim();
        if ndim != 2 && ndim != 3 {
            return Err(Error::Shape(format!(
                "images must be 2D or 3D, got {ndim}D {:?}",
                data.shape()
            )));
        }
        if data.shape().iter().any(|&d| d == 0) {
            return Err(Error::Shape(format!("zero-sized axis in {:?}", data.shape())));
        }
        if !(value_range.0 < value_range.1) {
            return Err(Error::InvalidArgument(format!(
                "value range {value_range:?} must satisfy lo < hi"
            )));
        }
        if let Some(idx) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(idx));
        }
        Ok(Self {
            data: data.as_standard_layout().into_owned(),
            value_range,
        })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::new(ArrayD::zeros(IxDyn(shape)))
    }

    pub fn filled(shape: &[usize], value: f32) -> Result<Self> {
        Self::new(ArrayD::from_elem(IxDyn(shape), value))
    }

    pub fn ndim(&self) -> usize {
        self.data.ndim()
    }

    pub fn shape(&self) -> &[usize] {
        self.data.shape()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &ArrayD<f32> {
        &self.data
    }

    pub fn into_data(self) -> ArrayD<f32> {
        self.data
    }

    pub fn as_slice(&self) -> &[f32] {
        self.data
            .as_slice()
            .expect("image data is kept in standard layout")
    }

    pub fn value_range(&self) -> (f32, f32) {
        self.value_range
    }

    /// Spatial shape padded to three axes, with depth 1 for 2D images.
    pub fn volume_shape(&self) -> [usize; 3] {
        volume_shape(self.shape())
    }

    /// Applies `f` elementwise; the result must stay finite.
    pub fn map(&self, f: impl Fn(f32) -> f32) -> Result<Self> {
        Self::with_range(self.data.mapv(f), self.value_range)
    }

    /// Same data with a different nominal range.
    pub fn relabel(mut self, value_range: (f32, f32)) -> Self {
        self.value_range = value_range;
        self
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.len() as f64
    }

    pub fn clip(&self, lo: f32, hi: f32) -> Self {
        Self {
            data: self.data.mapv(|v| v.clamp(lo, hi)),
            value_range: self.value_range,
        }
    }
}

/// Pads a 2D or 3D spatial shape to `[d, h, w]`.
pub fn volume_shape(shape: &[usize]) -> [usize; 3] {
    match shape {
        [h, w] => [1, *h, *w],
        [d, h, w] => [*d, *h, *w],
        _ => panic!("expected a 2D or 3D shape, got {shape:?}"),
    }
}

/// Reflect-pads (without edge repetition) by `(before, after)` per axis.
pub fn pad_reflect(data: &ArrayD<f32>, pads: &[(usize, usize)]) -> ArrayD<f32> {
    assert_eq!(pads.len(), data.ndim(), "one pad pair per axis");
    let shape = data.shape();
    let out_shape: Vec<usize> = shape.iter().zip(pads).map(|(&n, &(a, b))| n + a + b).collect();
    let maps: Vec<Vec<usize>> = shape
        .iter()
        .zip(pads)
        .zip(&out_shape)
        .map(|((&n, &(a, _)), &m)| {
            (0..m)
                .map(|p| crate::fftconv::reflect_index(p as isize - a as isize, n))
                .collect()
        })
        .collect();
    ArrayD::from_shape_fn(IxDyn(&out_shape), |idx| {
        let src: Vec<usize> = (0..idx.ndim()).map(|ax| maps[ax][idx[ax]]).collect();
        data[IxDyn(&src)]
    })
}

/// Mean and standard deviation recorded by [`standardize`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: f64,
    pub std: f64,
}

impl NormStats {
    pub fn new(mean: f64, std: f64) -> Result<Self> {
        if !(std > 0.0) || !mean.is_finite() || !std.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "normalization stats need finite mean and std > 0, got mean={mean}, std={std}"
            )));
        }
        Ok(Self { mean, std })
    }

    /// Statistics of `img` computed with a two-pass mean/variance.
    pub fn of(img: &Image) -> Result<Self> {
        let n = img.len() as f64;
        let mean = img.data.iter().map(|&v| v as f64).sum::<f64>() / n;
        let var = img
            .data
            .iter()
            .map(|&v| {
                let d = v as f64 - mean;
                d * d
            })
            .sum::<f64>()
            / n;
        let std = var.sqrt();
        let (lo, hi) = img.value_range;
        let threshold = 1e-8 * (hi - lo) as f64;
        if !(std > threshold) {
            return Err(Error::DegenerateStandardization { std, threshold });
        }
        Ok(Self { mean, std })
    }

    #[inline]
    pub fn forward(&self, v: f32) -> f32 {
        ((v as f64 - self.mean) / self.std) as f32
    }

    #[inline]
    pub fn inverse(&self, v: f32) -> f32 {
        (v as f64 * self.std + self.mean) as f32
    }

    pub fn destandardize_array(&self, data: &ArrayD<f32>) -> ArrayD<f32> {
        data.mapv(|v| self.inverse(v))
    }
}

/// Shifts and scales `img` to zero mean and unit variance.
pub fn standardize(img: &Image) -> Result<(Image, NormStats)> {
    let stats = NormStats::of(img)?;
    Ok((apply_standardize(img, &stats), stats))
}

/// Standardizes with previously recorded statistics.
pub fn apply_standardize(img: &Image, stats: &NormStats) -> Image {
    let (lo, hi) = img.value_range;
    let range = (stats.forward(lo), stats.forward(hi));
    let mut out = img.data.clone();
    out.mapv_inplace(|v| stats.forward(v));
    Image {
        data: out,
        value_range: range,
    }
}

/// Maps standardized values back: `img * std + mean`.
pub fn destandardize(img: &Image, stats: &NormStats) -> Image {
    let (lo, hi) = img.value_range;
    let mut out = ArrayD::zeros(img.data.raw_dim());
    Zip::from(&mut out)
        .and(&img.data)
        .for_each(|o, &v| *o = stats.inverse(v));
    Image {
        data: out,
        value_range: (stats.inverse(lo), stats.inverse(hi)),
    }
}

/// Deterministic random stream.
///
/// Streams are ChaCha8 keyed by a 64-bit seed, so equal seeds give equal
/// draws on every platform. Sub-streams for independent consumers are
/// derived with [`SeededRng::derive`] rather than by sharing one stream.
#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent stream for `(seed, label, indices...)`.
    pub fn derive(seed: u64, label: &str, indices: &[u64]) -> Self {
        let mut h = splitmix64(seed ^ 0x5851_f42d_4c95_7f2d);
        for b in label.bytes() {
            h = splitmix64(h ^ b as u64);
        }
        for &i in indices {
            h = splitmix64(h ^ splitmix64(i.wrapping_add(0x9e37_79b9_7f4a_7c15)));
        }
        Self::new(h)
    }
}

impl RngCore for SeededRng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.inner.fill_bytes(dest)
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> std::result::Result<(), rand::Error> {
        self.inner.try_fill_bytes(dest)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
