//! Restoration with a trained network: one unmasked forward pass per tile,
//! no PSF convolution.
//!
//! Large inputs are split into overlapping tiles whose outputs are blended
//! with separable tent weights. The image is reflect-padded so tiles cover
//! it exactly, and the padding is cropped after stitching.

use std::time::Instant;

use ndarray::{Array5, ArrayD, Axis, Dimension, IxDyn, Slice};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::UNet;
use crate::tensor::{apply_standardize, pad_reflect, Image, NormStats};

/// A fully convolutional map from `(n, 1, d, h, w)` to the same shape.
pub trait Network {
    fn forward(&self, x: &Array5<f32>) -> Result<Array5<f32>>;
    /// Every spatial extent passed to `forward` must be a multiple of this.
    fn divisor(&self) -> usize;
    /// Spatial dimensionality the network was built for.
    fn dims(&self) -> usize;
}

impl Network for UNet {
    fn forward(&self, x: &Array5<f32>) -> Result<Array5<f32>> {
        UNet::forward(self, x)
    }

    fn divisor(&self) -> usize {
        UNet::divisor(self)
    }

    fn dims(&self) -> usize {
        self.config().dims
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TileConfig {
    /// Tile side along every tiled axis.
    pub tile_size: usize,
    pub overlap: usize,
    pub enabled: bool,
}

impl Default for TileConfig {
    fn default() -> Self {
        Self::default_for(3)
    }
}

impl TileConfig {
    /// 128-wide tiles with 32 overlap; enabled by default only for 3D.
    pub fn default_for(dims: usize) -> Self {
        Self {
            tile_size: 128,
            overlap: 32,
            enabled: dims == 3,
        }
    }

    pub fn disabled() -> Self {
        Self {
            enabled: false,
            ..Self::default_for(2)
        }
    }

    pub fn validate(&self, divisor: usize) -> Result<()> {
        if !self.enabled {
            return Ok(());
        }
        if 2 * self.overlap >= self.tile_size {
            return Err(Error::Config(format!(
                "tiles need 2 * overlap < tile_size, got overlap {} and tile {}",
                self.overlap, self.tile_size
            )));
        }
        if self.tile_size % divisor != 0 {
            return Err(Error::Divisibility {
                shape: vec![self.tile_size],
                divisor,
            });
        }
        Ok(())
    }
}

/// Tent profile `min(i + 1, n - i)` scaled to peak 1.
pub fn tent(n: usize) -> Vec<f32> {
    let peak = n.div_ceil(2) as f32;
    (0..n).map(|i| (i + 1).min(n - i) as f32 / peak).collect()
}

/// Separable product of per-axis tents; positive everywhere, 1 at the centre.
pub fn pyramid_weights(shape: &[usize]) -> ArrayD<f32> {
    let profiles: Vec<Vec<f32>> = shape.iter().map(|&n| tent(n)).collect();
    ArrayD::from_shape_fn(IxDyn(shape), |idx| {
        idx.slice().iter().enumerate().map(|(ax, &i)| profiles[ax][i]).product()
    })
}

/// Result of [`predict`].
#[derive(Debug, Clone)]
pub struct Prediction {
    /// Restored image clipped to the input's nominal range.
    pub image: Image,
    /// Restored image before clipping.
    pub raw: Image,
    pub elapsed_ms: f64,
    pub tiles: usize,
}

/// `destandardize(f(standardize(img)))`, tiled when enabled.
pub fn predict<N: Network + ?Sized>(net: &N, img: &Image, stats: &NormStats, tiles: &TileConfig) -> Result<Prediction> {
    let start = Instant::now();
    if img.ndim() != net.dims() {
        return Err(Error::DimMismatch {
            image: img.ndim(),
            kernel: net.dims(),
        });
    }
    let div = net.divisor();
    tiles.validate(div)?;
    let x = apply_standardize(img, stats);
    let (y, count) = if tiles.enabled {
        predict_tiled(net, x.data(), tiles, div)?
    } else {
        (predict_whole(net, x.data(), div)?, 1)
    };
    let raw = Image::with_range(stats.destandardize_array(&y), img.value_range())?;
    let (lo, hi) = img.value_range();
    Ok(Prediction {
        image: raw.clip(lo, hi),
        raw,
        elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
        tiles: count,
    })
}

/// Pads each axis up to `target[ax]`, split evenly before and after.
fn pad_to(data: &ArrayD<f32>, target: &[usize]) -> (ArrayD<f32>, Vec<(usize, usize)>) {
    let pads: Vec<(usize, usize)> = data
        .shape()
        .iter()
        .zip(target)
        .map(|(&n, &t)| {
            let extra = t - n;
            (extra / 2, extra - extra / 2)
        })
        .collect();
    if pads.iter().all(|&(a, b)| a == 0 && b == 0) {
        return (data.clone(), pads);
    }
    (pad_reflect(data, &pads), pads)
}

fn crop(data: &ArrayD<f32>, pads: &[(usize, usize)], shape: &[usize]) -> ArrayD<f32> {
    let mut v = data.view();
    for (ax, (&(a, _), &n)) in pads.iter().zip(shape).enumerate() {
        v.slice_axis_inplace(Axis(ax), Slice::from(a..a + n));
    }
    v.to_owned()
}

fn to_batch(x: &ArrayD<f32>) -> Array5<f32> {
    let [d, h, w] = crate::tensor::volume_shape(x.shape());
    x.as_standard_layout()
        .into_owned()
        .into_shape_with_order((1, 1, d, h, w))
        .expect("element count preserved")
}

fn run<N: Network + ?Sized>(net: &N, x: &ArrayD<f32>) -> Result<ArrayD<f32>> {
    let y = net.forward(&to_batch(x))?;
    Ok(y.into_shape_with_order(IxDyn(x.shape())).expect("network preserves shape"))
}

fn predict_whole<N: Network + ?Sized>(net: &N, x: &ArrayD<f32>, div: usize) -> Result<ArrayD<f32>> {
    let target: Vec<usize> = x.shape().iter().map(|&n| n.div_ceil(div) * div).collect();
    let (padded, pads) = pad_to(x, &target);
    Ok(crop(&run(net, &padded)?, &pads, x.shape()))
}

/// Tile start offsets along one axis of (padded) length `len`.
fn tile_starts(len: usize, tile: usize, stride: usize) -> Vec<usize> {
    (0..=(len - tile) / stride).map(|k| k * stride).collect()
}

fn predict_tiled<N: Network + ?Sized>(
    net: &N,
    x: &ArrayD<f32>,
    cfg: &TileConfig,
    div: usize,
) -> Result<(ArrayD<f32>, usize)> {
    let shape = x.shape().to_vec();
    if shape.iter().all(|&n| n <= cfg.tile_size) {
        return Ok((predict_whole(net, x, div)?, 1));
    }
    let stride = cfg.tile_size - cfg.overlap;
    // Axes that fit in one tile are processed whole (padded to the divisor).
    let tile: Vec<usize> = shape
        .iter()
        .map(|&n| if n <= cfg.tile_size { n.div_ceil(div) * div } else { cfg.tile_size })
        .collect();
    let target: Vec<usize> = shape
        .iter()
        .zip(&tile)
        .map(|(&n, &t)| if n <= t { t } else { t + (n - t).div_ceil(stride) * stride })
        .collect();
    let (padded, pads) = pad_to(x, &target);
    let starts: Vec<Vec<usize>> = target
        .iter()
        .zip(&tile)
        .map(|(&n, &t)| if n == t { vec![0] } else { tile_starts(n, t, stride) })
        .collect();
    let weights = pyramid_weights(&tile);
    let mut acc = ArrayD::<f32>::zeros(IxDyn(&target));
    let mut wsum = ArrayD::<f32>::zeros(IxDyn(&target));

    let mut count = 0;
    let mut idx = vec![0usize; starts.len()];
    loop {
        let origin: Vec<usize> = idx.iter().enumerate().map(|(ax, &k)| starts[ax][k]).collect();
        let mut view = padded.view();
        for (ax, (&o, &t)) in origin.iter().zip(&tile).enumerate() {
            view.slice_axis_inplace(Axis(ax), Slice::from(o..o + t));
        }
        let y = run(net, &view.to_owned())?;
        let mut a = acc.view_mut();
        let mut w = wsum.view_mut();
        for (ax, (&o, &t)) in origin.iter().zip(&tile).enumerate() {
            a.slice_axis_inplace(Axis(ax), Slice::from(o..o + t));
            w.slice_axis_inplace(Axis(ax), Slice::from(o..o + t));
        }
        ndarray::Zip::from(&mut a)
            .and(&mut w)
            .and(&y)
            .and(&weights)
            .for_each(|a, w, &y, &k| {
                *a += y * k;
                *w += k;
            });
        count += 1;

        // Odometer over tile indices.
        let mut ax = 0;
        loop {
            if ax == idx.len() {
                let out = crop(&(acc / wsum), &pads, &shape);
                return Ok((out, count));
            }
            idx[ax] += 1;
            if idx[ax] < starts[ax].len() {
                break;
            }
            idx[ax] = 0;
            ax += 1;
        }
    }
}
