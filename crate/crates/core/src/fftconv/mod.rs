//! "Same"-shaped convolution with a fixed PSF, by direct summation or FFT.
//!
//! Inputs may carry any number of leading (batch, channel) axes; the
//! trailing `kernel.ndim()` axes are spatial. Both backends pad the input by
//! the kernel radius on every spatial axis, take the valid convolution and
//! therefore agree to rounding error. [`Convolver::adjoint`] applies the
//! exact transpose of [`Convolver::apply`], which is what backpropagation
//! through the PSF needs.

mod bench;
mod spectral;

use std::cell::Cell;
use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

pub use bench::{benchmark_conv, BenchResult};
use spectral::{Plan3, C32};

use crate::error::{Error, Result};
use crate::psf::PsfKernel;

/// Largest 2D kernel side for which direct convolution is preferred.
pub const DIRECT_MAX_SIDE_2D: usize = 25;
/// Largest 3D kernel side for which direct convolution is preferred.
pub const DIRECT_MAX_SIDE_3D: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConvBackend {
    Direct,
    Fft,
    Auto,
}

impl ConvBackend {
    /// Replaces `Auto` with the size-based choice.
    pub fn resolve(self, kernel_side: usize, dims: usize) -> ConvBackend {
        match self {
            ConvBackend::Auto => choose_backend(kernel_side, dims),
            other => other,
        }
    }
}

impl std::str::FromStr for ConvBackend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "direct" => Ok(Self::Direct),
            "fft" => Ok(Self::Fft),
            "auto" => Ok(Self::Auto),
            _ => Err(Error::InvalidArgument(format!("unknown backend `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    Reflect,
    Zero,
}

/// FFT for 2D kernels wider than 25 and 3D kernels wider than 9.
pub fn choose_backend(kernel_side: usize, dims: usize) -> ConvBackend {
    let fft = match dims {
        2 => kernel_side > DIRECT_MAX_SIDE_2D,
        _ => kernel_side > DIRECT_MAX_SIDE_3D,
    };
    if fft {
        ConvBackend::Fft
    } else {
        ConvBackend::Direct
    }
}

thread_local! {
    static CALLS: Cell<u64> = const { Cell::new(0) };
}

/// Number of convolutions (forward or adjoint) run on this thread.
pub fn convolve_call_count() -> u64 {
    CALLS.with(|c| c.get())
}

fn count_call() {
    CALLS.with(|c| c.set(c.get() + 1));
}

/// One-shot convolution; see [`Convolver`] for repeated use with one kernel.
pub fn convolve(
    x: &ArrayD<f32>,
    kernel: &PsfKernel,
    backend: ConvBackend,
    padding: Padding,
) -> Result<ArrayD<f32>> {
    Convolver::new(kernel.clone(), backend, padding).apply(x)
}

struct CachedSpectrum {
    plan: Plan3,
    /// Kernel spectrum with the inverse-transform `1/N` folded in.
    kernel: Vec<C32>,
}

/// A fixed kernel plus per-shape cached FFT plans and kernel spectra.
pub struct Convolver {
    kernel: PsfKernel,
    /// Kernel shape as `[d, h, w]`.
    kshape: [usize; 3],
    taps: Vec<f32>,
    backend: ConvBackend,
    padding: Padding,
    spectra: RwLock<HashMap<[usize; 3], Arc<CachedSpectrum>>>,
}

impl std::fmt::Debug for Convolver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Convolver")
            .field("kernel_shape", &self.kernel.shape())
            .field("backend", &self.backend)
            .field("padding", &self.padding)
            .finish()
    }
}

impl Convolver {
    pub fn new(kernel: PsfKernel, backend: ConvBackend, padding: Padding) -> Self {
        let backend = backend.resolve(kernel.side(), kernel.ndim());
        let kshape = to3(kernel.shape());
        let taps = kernel.data().as_standard_layout().iter().copied().collect();
        Self {
            kernel,
            kshape,
            taps,
            backend,
            padding,
            spectra: RwLock::new(HashMap::new()),
        }
    }

    pub fn kernel(&self) -> &PsfKernel {
        &self.kernel
    }

    /// The concrete backend (never `Auto`).
    pub fn backend(&self) -> ConvBackend {
        self.backend
    }

    pub fn padding(&self) -> Padding {
        self.padding
    }

    /// Number of padded shapes with a cached spectrum.
    pub fn cached_shapes(&self) -> usize {
        self.spectra.read().expect("spectrum cache poisoned").len()
    }

    pub fn apply(&self, x: &ArrayD<f32>) -> Result<ArrayD<f32>> {
        count_call();
        let (lead, spatial) = self.split_shape(x.shape())?;
        let maps = self.pad_maps(spatial);
        let pshape = padded_shape(spatial, self.kshape);
        let x = x.as_standard_layout();
        let src = x.as_slice().expect("standard layout");
        let n_in: usize = spatial.iter().product();
        let n_pad: usize = pshape.iter().product();
        let mut out = vec![0f32; lead * n_in];
        let mut padded = vec![0f32; n_pad];
        let spectrum = match self.backend {
            ConvBackend::Fft => Some(self.spectrum(pshape)),
            _ => None,
        };
        for (chunk_in, chunk_out) in src.chunks_exact(n_in).zip(out.chunks_exact_mut(n_in)) {
            pad_gather(chunk_in, spatial, &mut padded, pshape, &maps);
            match &spectrum {
                Some(cached) => fft_valid(cached, &padded, self.kshape, chunk_out, spatial),
                None => direct_valid(&padded, pshape, &self.taps, self.kshape, chunk_out, spatial),
            }
        }
        Ok(ArrayD::from_shape_vec(IxDyn(x.shape()), out).expect("shape preserved"))
    }

    /// Transpose of [`Convolver::apply`]: `<apply(x), y> == <x, adjoint(y)>`.
    pub fn adjoint(&self, dy: &ArrayD<f32>) -> Result<ArrayD<f32>> {
        count_call();
        let (lead, spatial) = self.split_shape(dy.shape())?;
        let maps = self.pad_maps(spatial);
        let pshape = padded_shape(spatial, self.kshape);
        let dy = dy.as_standard_layout();
        let src = dy.as_slice().expect("standard layout");
        let n_in: usize = spatial.iter().product();
        let n_pad: usize = pshape.iter().product();
        let mut out = vec![0f32; lead * n_in];
        let mut dpadded = vec![0f32; n_pad];
        let spectrum = match self.backend {
            ConvBackend::Fft => Some(self.spectrum(pshape)),
            _ => None,
        };
        for (chunk_in, chunk_out) in src.chunks_exact(n_in).zip(out.chunks_exact_mut(n_in)) {
            dpadded.iter_mut().for_each(|v| *v = 0.0);
            match &spectrum {
                Some(cached) => fft_valid_adjoint(cached, chunk_in, spatial, self.kshape, &mut dpadded),
                None => direct_valid_adjoint(chunk_in, spatial, &self.taps, self.kshape, &mut dpadded, pshape),
            }
            pad_scatter(&dpadded, pshape, chunk_out, spatial, &maps);
        }
        Ok(ArrayD::from_shape_vec(IxDyn(dy.shape()), out).expect("shape preserved"))
    }

    /// Builds (or fetches) the cached spectrum for a padded shape.
    fn spectrum(&self, pshape: [usize; 3]) -> Arc<CachedSpectrum> {
        if let Some(hit) = self.spectra.read().expect("spectrum cache poisoned").get(&pshape) {
            return hit.clone();
        }
        let plan = Plan3::new(pshape);
        let n: usize = pshape.iter().product();
        let mut embedded = vec![0f32; n];
        let [kd, kh, kw] = self.kshape;
        let (rd, rh, rw) = (kd / 2, kh / 2, kw / 2);
        for a in 0..kd {
            let z = (a + pshape[0] - rd) % pshape[0];
            for b in 0..kh {
                let y = (b + pshape[1] - rh) % pshape[1];
                for c in 0..kw {
                    let x = (c + pshape[2] - rw) % pshape[2];
                    embedded[(z * pshape[1] + y) * pshape[2] + x] = self.taps[(a * kh + b) * kw + c];
                }
            }
        }
        let scale = 1.0 / n as f32;
        let kernel = plan.forward(&embedded).into_iter().map(|v| v * scale).collect();
        let cached = Arc::new(CachedSpectrum { plan, kernel });
        self.spectra
            .write()
            .expect("spectrum cache poisoned")
            .entry(pshape)
            .or_insert(cached)
            .clone()
    }

    fn split_shape<'a>(&self, shape: &'a [usize]) -> Result<(usize, [usize; 3])> {
        let k = self.kernel.ndim();
        if shape.len() < k {
            return Err(Error::DimMismatch {
                image: shape.len(),
                kernel: k,
            });
        }
        let (lead, spatial) = shape.split_at(shape.len() - k);
        if spatial.iter().zip(self.kernel.shape()).any(|(&s, &n)| s < n) {
            return Err(Error::Kernel(format!(
                "kernel {:?} is larger than the image {:?} along some axis",
                self.kernel.shape(),
                spatial
            )));
        }
        Ok((lead.iter().product(), to3(spatial)))
    }

    fn pad_maps(&self, spatial: [usize; 3]) -> [Vec<isize>; 3] {
        let pad = |ax: usize| pad_map(spatial[ax], self.kshape[ax] / 2, self.padding);
        [pad(0), pad(1), pad(2)]
    }
}

fn to3(shape: &[usize]) -> [usize; 3] {
    match shape {
        [h, w] => [1, *h, *w],
        [d, h, w] => [*d, *h, *w],
        _ => unreachable!("kernels are 2D or 3D"),
    }
}

fn padded_shape(spatial: [usize; 3], kshape: [usize; 3]) -> [usize; 3] {
    [0, 1, 2].map(|ax| spatial[ax] + kshape[ax] - 1)
}

/// Reflected index without edge repetition (`d c b | a b c d | c b a`).
pub(crate) fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// Source index for every padded position, `-1` meaning zero fill.
fn pad_map(n: usize, radius: usize, padding: Padding) -> Vec<isize> {
    (0..n + 2 * radius)
        .map(|p| {
            let i = p as isize - radius as isize;
            match padding {
                Padding::Reflect => reflect_index(i, n) as isize,
                Padding::Zero if i < 0 || i >= n as isize => -1,
                Padding::Zero => i,
            }
        })
        .collect()
}

fn pad_gather(src: &[f32], s: [usize; 3], dst: &mut [f32], p: [usize; 3], maps: &[Vec<isize>; 3]) {
    for z in 0..p[0] {
        for y in 0..p[1] {
            let row = &mut dst[(z * p[1] + y) * p[2]..][..p[2]];
            let (sz, sy) = (maps[0][z], maps[1][y]);
            if sz < 0 || sy < 0 {
                row.iter_mut().for_each(|v| *v = 0.0);
                continue;
            }
            let src_row = &src[(sz as usize * s[1] + sy as usize) * s[2]..][..s[2]];
            for (v, &sx) in row.iter_mut().zip(&maps[2]) {
                *v = if sx < 0 { 0.0 } else { src_row[sx as usize] };
            }
        }
    }
}

fn pad_scatter(src: &[f32], p: [usize; 3], dst: &mut [f32], s: [usize; 3], maps: &[Vec<isize>; 3]) {
    for z in 0..p[0] {
        for y in 0..p[1] {
            let (sz, sy) = (maps[0][z], maps[1][y]);
            if sz < 0 || sy < 0 {
                continue;
            }
            let row = &src[(z * p[1] + y) * p[2]..][..p[2]];
            let dst_row = &mut dst[(sz as usize * s[1] + sy as usize) * s[2]..][..s[2]];
            for (&v, &sx) in row.iter().zip(&maps[2]) {
                if sx >= 0 {
                    dst_row[sx as usize] += v;
                }
            }
        }
    }
}

/// `out[i] = sum_a k[a] * xp[i + (n - 1) - a]` over the valid region.
fn direct_valid(xp: &[f32], p: [usize; 3], taps: &[f32], k: [usize; 3], out: &mut [f32], s: [usize; 3]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    for z in 0..s[0] {
        for y in 0..s[1] {
            let out_row = &mut out[(z * s[1] + y) * s[2]..][..s[2]];
            for a in 0..k[0] {
                let zs = z + k[0] - 1 - a;
                for b in 0..k[1] {
                    let ys = y + k[1] - 1 - b;
                    let in_row = &xp[(zs * p[1] + ys) * p[2]..][..p[2]];
                    let tap_row = &taps[(a * k[1] + b) * k[2]..][..k[2]];
                    for (c, &w) in tap_row.iter().enumerate() {
                        if w == 0.0 {
                            continue;
                        }
                        let off = k[2] - 1 - c;
                        for (o, &v) in out_row.iter_mut().zip(&in_row[off..off + s[2]]) {
                            *o += w * v;
                        }
                    }
                }
            }
        }
    }
}

fn direct_valid_adjoint(dy: &[f32], s: [usize; 3], taps: &[f32], k: [usize; 3], dxp: &mut [f32], p: [usize; 3]) {
    for z in 0..s[0] {
        for y in 0..s[1] {
            let dy_row = &dy[(z * s[1] + y) * s[2]..][..s[2]];
            for a in 0..k[0] {
                let zs = z + k[0] - 1 - a;
                for b in 0..k[1] {
                    let ys = y + k[1] - 1 - b;
                    let dst_row = &mut dxp[(zs * p[1] + ys) * p[2]..][..p[2]];
                    let tap_row = &taps[(a * k[1] + b) * k[2]..][..k[2]];
                    for (c, &w) in tap_row.iter().enumerate() {
                        if w == 0.0 {
                            continue;
                        }
                        let off = k[2] - 1 - c;
                        for (d, &g) in dst_row[off..off + s[2]].iter_mut().zip(dy_row) {
                            *d += w * g;
                        }
                    }
                }
            }
        }
    }
}

fn fft_valid(cached: &CachedSpectrum, xp: &[f32], k: [usize; 3], out: &mut [f32], s: [usize; 3]) {
    let mut spec = cached.plan.forward(xp);
    for (v, &kv) in spec.iter_mut().zip(&cached.kernel) {
        *v *= kv;
    }
    let full = cached.plan.inverse(spec);
    let p = cached.plan.shape;
    let r = [k[0] / 2, k[1] / 2, k[2] / 2];
    for z in 0..s[0] {
        for y in 0..s[1] {
            let src = &full[((z + r[0]) * p[1] + y + r[1]) * p[2] + r[2]..][..s[2]];
            out[(z * s[1] + y) * s[2]..][..s[2]].copy_from_slice(src);
        }
    }
}

fn fft_valid_adjoint(cached: &CachedSpectrum, dy: &[f32], s: [usize; 3], k: [usize; 3], dxp: &mut [f32]) {
    let p = cached.plan.shape;
    let r = [k[0] / 2, k[1] / 2, k[2] / 2];
    let mut embedded = vec![0f32; p.iter().product()];
    for z in 0..s[0] {
        for y in 0..s[1] {
            let dst = &mut embedded[((z + r[0]) * p[1] + y + r[1]) * p[2] + r[2]..][..s[2]];
            dst.copy_from_slice(&dy[(z * s[1] + y) * s[2]..][..s[2]]);
        }
    }
    let mut spec = cached.plan.forward(&embedded);
    for (v, &kv) in spec.iter_mut().zip(&cached.kernel) {
        *v *= kv.conj();
    }
    dxp.copy_from_slice(&cached.plan.inverse(spec));
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::psf::gaussian_psf;
    use crate::tensor::SeededRng;
    use rand::Rng;

    fn random(shape: &[usize], seed: u64) -> ArrayD<f32> {
        let mut rng = SeededRng::new(seed);
        ArrayD::from_shape_fn(IxDyn(shape), |_| rng.gen::<f32>())
    }

    fn random_kernel(dims: usize, side: usize, seed: u64) -> PsfKernel {
        let raw = random(&vec![side; dims], seed);
        PsfKernel::normalize(raw).unwrap().0
    }

    fn sup(a: &ArrayD<f32>, b: &ArrayD<f32>) -> f32 {
        a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f32::max)
    }

    /// Nested-loop oracle: out[i] = sum_o k[r + o] * x[pad(i - o)].
    fn oracle_2d(x: &ArrayD<f32>, k: &PsfKernel, padding: Padding) -> ArrayD<f32> {
        let (h, w) = (x.shape()[0], x.shape()[1]);
        let (kh, kw) = (k.shape()[0], k.shape()[1]);
        let (rh, rw) = ((kh / 2) as isize, (kw / 2) as isize);
        ArrayD::from_shape_fn(IxDyn(&[h, w]), |idx| {
            let mut acc = 0f64;
            for a in 0..kh as isize {
                for b in 0..kw as isize {
                    let yi = idx[0] as isize - (a - rh);
                    let xi = idx[1] as isize - (b - rw);
                    let v = match padding {
                        Padding::Reflect => x[[reflect_index(yi, h), reflect_index(xi, w)]],
                        Padding::Zero => {
                            if yi < 0 || xi < 0 || yi >= h as isize || xi >= w as isize {
                                0.0
                            } else {
                                x[[yi as usize, xi as usize]]
                            }
                        }
                    };
                    acc += k.data()[[a as usize, b as usize]] as f64 * v as f64;
                }
            }
            acc as f32
        })
    }

    fn oracle_3d_zero(x: &ArrayD<f32>, k: &PsfKernel) -> ArrayD<f32> {
        let s: Vec<isize> = x.shape().iter().map(|&v| v as isize).collect();
        let n = k.shape()[0] as isize;
        let r = n / 2;
        ArrayD::from_shape_fn(IxDyn(x.shape()), |idx| {
            let mut acc = 0f64;
            for a in 0..n {
                for b in 0..n {
                    for c in 0..n {
                        let z = idx[0] as isize - (a - r);
                        let y = idx[1] as isize - (b - r);
                        let xx = idx[2] as isize - (c - r);
                        if z < 0 || y < 0 || xx < 0 || z >= s[0] || y >= s[1] || xx >= s[2] {
                            continue;
                        }
                        acc += k.data()[[a as usize, b as usize, c as usize]] as f64
                            * x[[z as usize, y as usize, xx as usize]] as f64;
                    }
                }
            }
            acc as f32
        })
    }

    #[test]
    fn backend_thresholds() {
        assert_eq!(choose_backend(17, 3), ConvBackend::Fft);
        assert_eq!(choose_backend(9, 3), ConvBackend::Direct);
        assert_eq!(choose_backend(17, 2), ConvBackend::Direct);
        assert_eq!(choose_backend(25, 2), ConvBackend::Direct);
        assert_eq!(choose_backend(27, 2), ConvBackend::Fft);
        assert_eq!(ConvBackend::Auto.resolve(11, 3), ConvBackend::Fft);
    }

    #[test]
    fn delta_kernel_is_identity() {
        let x = random(&[6, 20, 23], 1);
        for dims in [2, 3] {
            let k = PsfKernel::delta(dims, 5).unwrap();
            for backend in [ConvBackend::Direct, ConvBackend::Fft] {
                for padding in [Padding::Reflect, Padding::Zero] {
                    let y = convolve(&x, &k, backend, padding).unwrap();
                    assert!(sup(&x, &y) <= 1e-5, "{dims}D {backend:?} {padding:?}");
                }
            }
        }
    }

    #[test]
    fn reflect_padding_matches_nested_loop_oracle() {
        let x = random(&[32, 32], 2);
        let k = random_kernel(2, 5, 3);
        let expect = oracle_2d(&x, &k, Padding::Reflect);
        for backend in [ConvBackend::Direct, ConvBackend::Fft] {
            let y = convolve(&x, &k, backend, Padding::Reflect).unwrap();
            assert!(sup(&y, &expect) <= 1e-5, "{backend:?}");
        }
        let y = convolve(&x, &k, ConvBackend::Direct, Padding::Zero).unwrap();
        assert!(sup(&y, &oracle_2d(&x, &k, Padding::Zero)) <= 1e-5);
    }

    #[test]
    fn fft_matches_direct_with_large_2d_kernel() {
        let x = random(&[64, 64], 4);
        let k = random_kernel(2, 17, 5);
        let a = convolve(&x, &k, ConvBackend::Direct, Padding::Reflect).unwrap();
        let b = convolve(&x, &k, ConvBackend::Fft, Padding::Reflect).unwrap();
        assert!(sup(&a, &b) <= 1e-4);
    }

    #[test]
    fn fft_matches_3d_oracle_with_zero_padding() {
        let x = random(&[32, 32, 32], 6);
        let k = gaussian_psf(3, 9, 2.0).unwrap();
        let expect = oracle_3d_zero(&x, &k);
        let y = convolve(&x, &k, ConvBackend::Fft, Padding::Zero).unwrap();
        assert!(sup(&y, &expect) <= 1e-4);
    }

    #[test]
    fn constant_is_preserved_under_reflect() {
        let x = ArrayD::from_elem(IxDyn(&[12, 13]), 0.37f32);
        let k = random_kernel(2, 7, 7);
        for backend in [ConvBackend::Direct, ConvBackend::Fft] {
            let y = convolve(&x, &k, backend, Padding::Reflect).unwrap();
            assert!(y.iter().all(|&v| (v - 0.37).abs() < 1e-5));
        }
    }

    #[test]
    fn adjoint_satisfies_dot_product_identity() {
        for (shape, dims) in [(vec![3, 17, 19], 2), (vec![9, 10, 11], 3)] {
            let x = random(&shape, 8);
            let y = random(&shape, 9);
            let k = random_kernel(dims, 5, 10);
            for backend in [ConvBackend::Direct, ConvBackend::Fft] {
                for padding in [Padding::Reflect, Padding::Zero] {
                    let conv = Convolver::new(k.clone(), backend, padding);
                    let ax = conv.apply(&x).unwrap();
                    let aty = conv.adjoint(&y).unwrap();
                    let lhs: f64 = ax.iter().zip(y.iter()).map(|(a, b)| *a as f64 * *b as f64).sum();
                    let rhs: f64 = x.iter().zip(aty.iter()).map(|(a, b)| *a as f64 * *b as f64).sum();
                    assert!((lhs - rhs).abs() <= 1e-4 * lhs.abs(), "{backend:?} {padding:?}: {lhs} vs {rhs}");
                }
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        // loss = 0.5 * ||conv(x) - t||^2, d loss / dx = adjoint(conv(x) - t)
        let x = random(&[8, 8], 11);
        let t = random(&[8, 8], 12);
        let k = random_kernel(2, 3, 13);
        for backend in [ConvBackend::Direct, ConvBackend::Fft] {
            let conv = Convolver::new(k.clone(), backend, Padding::Reflect);
            let loss = |x: &ArrayD<f32>| -> f64 {
                let y = conv.apply(x).unwrap();
                y.iter().zip(t.iter()).map(|(a, b)| 0.5 * (*a as f64 - *b as f64).powi(2)).sum()
            };
            let resid = &conv.apply(&x).unwrap() - &t;
            let grad = conv.adjoint(&resid).unwrap();
            let eps = 1e-2f32;
            for i in [0usize, 9, 27, 63] {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp.as_slice_mut().unwrap()[i] += eps;
                xm.as_slice_mut().unwrap()[i] -= eps;
                let fd = (loss(&xp) - loss(&xm)) / (2.0 * eps as f64);
                let g = grad.as_slice().unwrap()[i] as f64;
                assert!((fd - g).abs() <= 1e-2 * g.abs().max(1e-3), "{backend:?} [{i}] {fd} vs {g}");
            }
        }
    }

    #[test]
    fn spectrum_is_cached_per_shape() {
        let k = random_kernel(2, 5, 14);
        let conv = Convolver::new(k, ConvBackend::Fft, Padding::Reflect);
        conv.apply(&random(&[16, 16], 1)).unwrap();
        conv.apply(&random(&[4, 16, 16], 2)).unwrap();
        assert_eq!(conv.cached_shapes(), 1);
        conv.apply(&random(&[16, 20], 3)).unwrap();
        assert_eq!(conv.cached_shapes(), 2);
    }

    #[test]
    fn argument_errors() {
        let k = random_kernel(2, 7, 15);
        assert!(convolve(&random(&[5, 9], 0), &k, ConvBackend::Fft, Padding::Zero).is_err());
        let k3 = random_kernel(3, 3, 16);
        assert!(matches!(
            convolve(&random(&[9, 9], 0), &k3, ConvBackend::Direct, Padding::Zero),
            Err(Error::DimMismatch { .. })
        ));
    }

    #[test]
    fn reflect_index_folds() {
        let got: Vec<usize> = (-3..7).map(|i| reflect_index(i, 4)).collect();
        assert_eq!(got, vec![3, 2, 1, 0, 1, 2, 3, 2, 1, 0]);
        assert_eq!(reflect_index(-5, 1), 0);
    }

    #[test]
    fn call_counter_increments() {
        let before = convolve_call_count();
        let k = PsfKernel::delta(2, 3).unwrap();
        convolve(&random(&[5, 5], 0), &k, ConvBackend::Direct, Padding::Zero).unwrap();
        assert_eq!(convolve_call_count(), before + 1);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]
            #[test]
            fn convolution_is_linear(seed in any::<u64>(), a in -2f32..2.0, b in -2f32..2.0) {
                let x = random(&[14, 15], seed);
                let y = random(&[14, 15], seed ^ 1);
                let k = random_kernel(2, 5, seed ^ 2);
                for backend in [ConvBackend::Direct, ConvBackend::Fft] {
                    let conv = Convolver::new(k.clone(), backend, Padding::Reflect);
                    let lhs = conv.apply(&(&x * a + &y * b)).unwrap();
                    let rhs = &conv.apply(&x).unwrap() * a + &conv.apply(&y).unwrap() * b;
                    prop_assert!(sup(&lhs, &rhs) <= 1e-4);
                }
            }
        }
    }
}
