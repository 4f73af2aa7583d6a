//! Synthetic ground truth for desk-scale experiments.
//!
//! Every generator is a pure function of its arguments and the RNG state;
//! outputs are finite and lie in [0, 1].

use std::f64::consts::PI;

use log::debug;
use ndarray::{Array2, ArrayD, IxDyn};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{volume_shape, Image, SeededRng};

/// Foreground budget of the fiber phantom. Fibers are truncated once it is hit.
pub const MAX_FOREGROUND: f64 = 0.045;

const MIN_FIBER_SIDE: usize = 32;
const MIN_TEXTURE_SIDE: usize = 64;

/// Sparse tubes on a dark background. `shape` is `(h, w)` or `(d, h, w)`.
///
/// Each fiber is a persistent random walk with 1 to 2 voxel radius and a
/// constant intensity in [0.5, 1]. Overlaps keep the brighter fiber.
pub fn microtubules_phantom(shape: &[usize], n_fibers: usize, rng: &mut SeededRng) -> Result<Image> {
    if !(2..=3).contains(&shape.len()) || shape.iter().any(|&s| s < MIN_FIBER_SIDE) {
        return Err(Error::InvalidArgument(format!(
            "fiber phantom needs 2 or 3 axes of at least {MIN_FIBER_SIDE}, got {shape:?}"
        )));
    }
    if n_fibers == 0 {
        return Err(Error::InvalidArgument("need at least one fiber".into()));
    }
    let [d, h, w] = volume_shape(shape);
    let planar = shape.len() == 2;
    let mut vol = vec![0f32; d * h * w];
    let budget = (MAX_FOREGROUND * (d * h * w) as f64) as usize;
    let mut lit = 0usize;
    let ext = [d as f64, h as f64, w as f64];

    'fibers: for fiber in 0..n_fibers {
        let radius: f64 = rng.gen_range(1.0..=2.0);
        let intensity: f32 = rng.gen_range(0.5..=1.0);
        let mut p = [0.0f64; 3];
        for (a, e) in p.iter_mut().zip(ext) {
            *a = rng.gen_range(0.0..e);
        }
        let mut dir = random_direction(rng, planar);
        let length = rng.gen_range(0.5..1.5) * ext[1].max(ext[2]);
        let step = 0.5;
        let mut travelled = 0.0;
        while travelled < length {
            if lit >= budget {
                debug!("fiber phantom: foreground budget reached at fiber {fiber}");
                break 'fibers;
            }
            lit += stamp_ball(&mut vol, [d, h, w], p, radius, intensity);
            // Persistent walk: small random turns keep the curve smooth.
            for (k, c) in dir.iter_mut().enumerate() {
                if !(planar && k == 0) {
                    let turn: f64 = StandardNormal.sample(rng);
                    *c += 0.08 * turn;
                }
            }
            normalize(&mut dir);
            for k in 0..3 {
                p[k] += step * dir[k];
            }
            if (0..3).any(|k| p[k] < -radius || p[k] > ext[k] + radius) {
                break;
            }
            travelled += step;
        }
    }
    let data = ArrayD::from_shape_vec(IxDyn(shape), vol).expect("shape matches volume");
    Image::with_range(data, (0.0, 1.0))
}

fn random_direction(rng: &mut SeededRng, planar: bool) -> [f64; 3] {
    loop {
        let mut v = [0.0; 3];
        for (k, c) in v.iter_mut().enumerate() {
            if !(planar && k == 0) {
                *c = StandardNormal.sample(rng);
            }
        }
        if normalize(&mut v) > 1e-6 {
            return v;
        }
    }
}

fn normalize(v: &mut [f64; 3]) -> f64 {
    let n = v.iter().map(|c| c * c).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|c| *c /= n);
    }
    n
}

/// Sets voxels within `radius` of `center` to at least `value`; returns the
/// number of newly lit voxels.
fn stamp_ball(vol: &mut [f32], [d, h, w]: [usize; 3], center: [f64; 3], radius: f64, value: f32) -> usize {
    // Inclusive voxel range along one axis, empty when the ball misses it.
    let span = |c: f64, n: usize| {
        let lo = (c - radius).ceil().max(0.0) as usize;
        let hi = (c + radius).floor().min(n as f64 - 1.0);
        if hi < 0.0 {
            lo..0
        } else {
            lo..hi as usize + 1
        }
    };
    let zs = if d == 1 { 0..1 } else { span(center[0], d) };
    let mut fresh = 0;
    for z in zs {
        let dz = if d == 1 { 0.0 } else { z as f64 - center[0] };
        for y in span(center[1], h) {
            let dy = y as f64 - center[1];
            for x in span(center[2], w) {
                let dx = x as f64 - center[2];
                if dz * dz + dy * dy + dx * dx <= radius * radius {
                    let v = &mut vol[(z * h + y) * w + x];
                    if *v == 0.0 {
                        fresh += 1;
                    }
                    *v = v.max(value);
                }
            }
        }
    }
    fresh
}

/// Band-limited texture plus piecewise-constant shapes and point sources,
/// rescaled into [0, 1]. `shape` is `(h, w)`.
pub fn texture_phantom_2d(shape: &[usize], rng: &mut SeededRng) -> Result<Image> {
    if shape.len() != 2 || shape.iter().any(|&s| s < MIN_TEXTURE_SIDE) {
        return Err(Error::InvalidArgument(format!(
            "texture phantom needs 2 axes of at least {MIN_TEXTURE_SIDE}, got {shape:?}"
        )));
    }
    let (h, w) = (shape[0], shape[1]);
    let mut img = Array2::<f64>::zeros((h, w));

    // Smooth texture: random plane waves with 2 to 16 cycles across the image.
    for _ in 0..24 {
        let cycles: f64 = rng.gen_range(2.0..16.0);
        let theta: f64 = rng.gen_range(0.0..PI);
        let phase: f64 = rng.gen_range(0.0..2.0 * PI);
        let amp = rng.gen_range(0.2..1.0) / cycles.sqrt();
        let (ky, kx) = (2.0 * PI * cycles * theta.sin() / h as f64, 2.0 * PI * cycles * theta.cos() / w as f64);
        img.indexed_iter_mut()
            .for_each(|((y, x), v)| *v += amp * (ky * y as f64 + kx * x as f64 + phase).cos());
    }
    let (lo, hi) = img.iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
    img.mapv_inplace(|v| 0.35 * (v - lo) / (hi - lo).max(1e-12));

    // Edges: discs and axis-aligned rectangles with constant offsets.
    for i in 0..10 {
        let cy = rng.gen_range(0.0..h as f64);
        let cx = rng.gen_range(0.0..w as f64);
        let size = rng.gen_range(0.04..0.15) * h.min(w) as f64;
        let level = rng.gen_range(0.15..0.35) * if rng.gen_bool(0.25) { -1.0 } else { 1.0 };
        let disc = i % 2 == 0;
        let aspect: f64 = rng.gen_range(0.5..2.0);
        img.indexed_iter_mut().for_each(|((y, x), v)| {
            let (dy, dx) = (y as f64 - cy, x as f64 - cx);
            let inside = if disc {
                dy * dy + dx * dx <= size * size
            } else {
                dy.abs() <= size && dx.abs() <= size * aspect
            };
            if inside {
                *v += level;
            }
        });
    }

    // Point sources: small Gaussian spots.
    let n_points = (h * w) / 1024;
    for _ in 0..n_points {
        let cy = rng.gen_range(0.0..h as f64);
        let cx = rng.gen_range(0.0..w as f64);
        let sigma: f64 = rng.gen_range(0.6..1.5);
        let amp = rng.gen_range(0.3..0.6);
        let r = (3.0 * sigma).ceil() as isize;
        for y in (cy as isize - r).max(0)..=(cy as isize + r).min(h as isize - 1) {
            for x in (cx as isize - r).max(0)..=(cx as isize + r).min(w as isize - 1) {
                let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
                img[[y as usize, x as usize]] += amp * (-d2 / (2.0 * sigma * sigma)).exp();
            }
        }
    }

    let (lo, hi) = img.iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
    let data = img.mapv(|v| (0.02 + 0.96 * (v - lo) / (hi - lo).max(1e-12)) as f32).into_dyn();
    Image::with_range(data, (0.0, 1.0))
}

/// Named generator, as used by configs and the command line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum PhantomSpec {
    Texture { shape: Vec<usize> },
    Microtubules { shape: Vec<usize>, n_fibers: usize },
}

impl PhantomSpec {
    pub fn generate(&self, seed: u64) -> Result<Image> {
        let mut rng = SeededRng::derive(seed, "phantom", &[]);
        match self {
            PhantomSpec::Texture { shape } => texture_phantom_2d(shape, &mut rng),
            PhantomSpec::Microtubules { shape, n_fibers } => microtubules_phantom(shape, *n_fibers, &mut rng),
        }
    }

    pub fn shape(&self) -> &[usize] {
        match self {
            PhantomSpec::Texture { shape } | PhantomSpec::Microtubules { shape, .. } => shape,
        }
    }
}

/// Mean absolute forward difference over all axes.
pub fn mean_abs_gradient(img: &Image) -> f64 {
    let data = img.data();
    let mut total = 0.0;
    let mut count = 0usize;
    for axis in 0..data.ndim() {
        let n = data.shape()[axis];
        if n < 2 {
            continue;
        }
        let a = data.slice_axis(ndarray::Axis(axis), (1..n).into());
        let b = data.slice_axis(ndarray::Axis(axis), (0..n - 1).into());
        ndarray::Zip::from(&a).and(&b).for_each(|&p, &q| {
            total += (p - q).abs() as f64;
            count += 1;
        });
    }
    if count == 0 {
        0.0
    } else {
        total / count as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn in_unit_range(img: &Image) -> bool {
        img.as_slice().iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v))
    }

    fn foreground(img: &Image) -> f64 {
        img.as_slice().iter().filter(|&&v| v > 0.0).count() as f64 / img.len() as f64
    }

    #[test]
    fn fibers_are_sparse_bright_and_in_range() {
        let img = microtubules_phantom(&[64, 96, 96], 30, &mut SeededRng::new(1)).unwrap();
        assert!(in_unit_range(&img));
        let fg = foreground(&img);
        assert!(fg > 0.002 && fg < 0.05, "foreground {fg}");
        assert!(img.as_slice().iter().filter(|&&v| v > 0.0).all(|&v| v >= 0.5));
    }

    #[test]
    fn fiber_budget_caps_dense_requests() {
        let img = microtubules_phantom(&[32, 32, 32], 500, &mut SeededRng::new(2)).unwrap();
        assert!(foreground(&img) < 0.05);
    }

    #[test]
    fn fibers_work_in_2d() {
        let img = microtubules_phantom(&[64, 80], 5, &mut SeededRng::new(3)).unwrap();
        assert_eq!(img.shape(), &[64, 80]);
        assert!(foreground(&img) > 0.0 && foreground(&img) < 0.05);
    }

    #[test]
    fn texture_has_detail_and_spans_the_range() {
        let img = texture_phantom_2d(&[128, 96], &mut SeededRng::new(4)).unwrap();
        assert!(in_unit_range(&img));
        assert!(mean_abs_gradient(&img) > 1e-3);
        let (lo, hi) = img.min_max();
        assert!(hi - lo > 0.9);
    }

    #[test]
    fn gradient_oracle_on_a_ramp() {
        let ramp = Image::new(ArrayD::from_shape_fn(IxDyn(&[4, 5]), |i| 0.1 * i[1] as f32)).unwrap();
        // Horizontal steps are 0.1 (16 of them), vertical steps are 0 (15).
        let expected = 16.0 * 0.1 / 31.0;
        assert!((mean_abs_gradient(&ramp) - expected).abs() < 1e-7);
    }

    #[test]
    fn generators_are_seed_deterministic() {
        let a = PhantomSpec::Texture { shape: vec![64, 64] };
        assert_eq!(a.generate(7).unwrap(), a.generate(7).unwrap());
        assert_ne!(a.generate(7).unwrap(), a.generate(8).unwrap());
        let b = PhantomSpec::Microtubules { shape: vec![32, 48, 48], n_fibers: 6 };
        assert_eq!(b.generate(7).unwrap(), b.generate(7).unwrap());
    }

    #[test]
    fn undersized_requests_are_rejected() {
        let mut rng = SeededRng::new(0);
        assert!(texture_phantom_2d(&[63, 64], &mut rng).is_err());
        assert!(texture_phantom_2d(&[64, 64, 64], &mut rng).is_err());
        assert!(microtubules_phantom(&[31, 64, 64], 3, &mut rng).is_err());
        assert!(microtubules_phantom(&[32, 32, 32], 0, &mut rng).is_err());
    }

    #[test]
    fn spec_round_trips_through_toml() {
        let spec: PhantomSpec = toml::from_str("kind = \"microtubules\"\nshape = [32, 64, 64]\nn_fibers = 12").unwrap();
        assert_eq!(spec, PhantomSpec::Microtubules { shape: vec![32, 64, 64], n_fibers: 12 });
        assert!(toml::from_str::<PhantomSpec>("kind = \"texture\"\nshape = [64, 64]\nextra = 1").is_err());
    }
}
