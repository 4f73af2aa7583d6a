//! Network building blocks with hand-written backward passes.
//!
//! Activations are `(batch, channels, d, h, w)` arrays; 2D data uses
//! `d = 1` with kernels and pooling windows of depth 1.

use ndarray::Array5;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::fftconv::{reflect_index, Padding};
use crate::tensor::SeededRng;

/// A trainable tensor with its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Vec<f32>,
    pub grad: Vec<f32>,
}

impl Param {
    fn new(value: Vec<f32>) -> Self {
        let grad = vec![0.0; value.len()];
        Self { value, grad }
    }

    fn uniform(len: usize, bound: f32, rng: &mut SeededRng) -> Self {
        Self::new((0..len).map(|_| rng.gen_range(-bound..bound)).collect())
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }
}

fn dims(x: &Array5<f32>) -> (usize, usize, [usize; 3]) {
    let s = x.shape();
    (s[0], s[1], [s[2], s[3], s[4]])
}

fn slice(x: &Array5<f32>) -> &[f32] {
    x.as_slice().expect("activations are kept in standard layout")
}

fn slice_mut(x: &mut Array5<f32>) -> &mut [f32] {
    x.as_slice_mut().expect("activations are kept in standard layout")
}

/// Upper bound on im2col buffer size, in floats.
const COL_BUDGET: usize = 1 << 21;

/// "Same" convolution (cross-correlation, as usual for networks) with zero
/// or reflect padding. Weights are `(cout, cin * kd * kh * kw)` row-major.
#[derive(Debug, Clone)]
pub struct Conv {
    pub cin: usize,
    pub cout: usize,
    pub kernel: [usize; 3],
    pub padding: Padding,
    pub weight: Param,
    pub bias: Param,
}

impl Conv {
    /// Fan-in uniform init for weights and bias.
    pub fn new(cin: usize, cout: usize, kernel: [usize; 3], rng: &mut SeededRng) -> Self {
        let kvol: usize = kernel.iter().product();
        let bound = 1.0 / ((cin * kvol) as f32).sqrt();
        Self {
            cin,
            cout,
            kernel,
            padding: Padding::Zero,
            weight: Param::uniform(cout * cin * kvol, bound, rng),
            bias: Param::uniform(cout, bound, rng),
        }
    }

    pub fn with_padding(mut self, padding: Padding) -> Self {
        self.padding = padding;
        self
    }

    fn kvol(&self) -> usize {
        self.kernel.iter().product()
    }

    fn pointwise(&self) -> bool {
        self.kvol() == 1
    }

    fn rows_per_chunk(&self, s: [usize; 3]) -> usize {
        let per_row = self.cin * self.kvol() * s[2];
        (COL_BUDGET / per_row.max(1)).clamp(1, s[0] * s[1])
    }

    pub fn forward(&self, x: &Array5<f32>) -> Array5<f32> {
        let (n, cin, s) = dims(x);
        assert_eq!(cin, self.cin, "conv input channels");
        let sp: usize = s.iter().product();
        let kk = self.cin * self.kvol();
        let mut y = Array5::zeros((n, self.cout, s[0], s[1], s[2]));
        let xs = slice(x);
        let ys = slice_mut(&mut y);
        for b in 0..n {
            let xb = &xs[b * cin * sp..][..cin * sp];
            let yb = &mut ys[b * self.cout * sp..][..self.cout * sp];
            for (o, row) in yb.chunks_exact_mut(sp).enumerate() {
                row.iter_mut().for_each(|v| *v = self.bias.value[o]);
            }
            if self.pointwise() {
                unsafe {
                    matrixmultiply::sgemm(
                        self.cout, kk, sp, 1.0,
                        self.weight.value.as_ptr(), kk as isize, 1,
                        xb.as_ptr(), sp as isize, 1,
                        1.0, yb.as_mut_ptr(), sp as isize, 1,
                    );
                }
                continue;
            }
            let rows = self.rows_per_chunk(s);
            let mut col = Vec::new();
            for r0 in (0..s[0] * s[1]).step_by(rows) {
                let r1 = (r0 + rows).min(s[0] * s[1]);
                let np = (r1 - r0) * s[2];
                im2col(xb, self.cin, s, self.kernel, self.padding, r0, r1, &mut col);
                unsafe {
                    matrixmultiply::sgemm(
                        self.cout, kk, np, 1.0,
                        self.weight.value.as_ptr(), kk as isize, 1,
                        col.as_ptr(), np as isize, 1,
                        1.0, yb.as_mut_ptr().add(r0 * s[2]), sp as isize, 1,
                    );
                }
            }
        }
        y
    }

    /// Accumulates parameter gradients; returns the input gradient when
    /// `need_dx` is set.
    pub fn backward(&mut self, x: &Array5<f32>, dy: &Array5<f32>, need_dx: bool) -> Option<Array5<f32>> {
        let (n, cin, s) = dims(x);
        let sp: usize = s.iter().product();
        let kk = self.cin * self.kvol();
        let xs = slice(x);
        let dys = slice(dy);
        let mut dx = need_dx.then(|| Array5::<f32>::zeros((n, cin, s[0], s[1], s[2])));
        for b in 0..n {
            let xb = &xs[b * cin * sp..][..cin * sp];
            let dyb = &dys[b * self.cout * sp..][..self.cout * sp];
            for (o, row) in dyb.chunks_exact(sp).enumerate() {
                self.bias.grad[o] += row.iter().sum::<f32>();
            }
            let dxb = dx.as_mut().map(|d| &mut slice_mut(d)[b * cin * sp..][..cin * sp]);
            if self.pointwise() {
                unsafe {
                    // dW += dy * x^T
                    matrixmultiply::sgemm(
                        self.cout, sp, kk, 1.0,
                        dyb.as_ptr(), sp as isize, 1,
                        xb.as_ptr(), 1, sp as isize,
                        1.0, self.weight.grad.as_mut_ptr(), kk as isize, 1,
                    );
                    if let Some(dxb) = dxb {
                        // dx = W^T * dy
                        matrixmultiply::sgemm(
                            kk, self.cout, sp, 1.0,
                            self.weight.value.as_ptr(), 1, kk as isize,
                            dyb.as_ptr(), sp as isize, 1,
                            0.0, dxb.as_mut_ptr(), sp as isize, 1,
                        );
                    }
                }
                continue;
            }
            let rows = self.rows_per_chunk(s);
            let mut col = Vec::new();
            let mut dcol = Vec::new();
            let mut dxb = dxb;
            for r0 in (0..s[0] * s[1]).step_by(rows) {
                let r1 = (r0 + rows).min(s[0] * s[1]);
                let np = (r1 - r0) * s[2];
                im2col(xb, self.cin, s, self.kernel, self.padding, r0, r1, &mut col);
                unsafe {
                    matrixmultiply::sgemm(
                        self.cout, np, kk, 1.0,
                        dyb.as_ptr().add(r0 * s[2]), sp as isize, 1,
                        col.as_ptr(), 1, np as isize,
                        1.0, self.weight.grad.as_mut_ptr(), kk as isize, 1,
                    );
                }
                if let Some(dxb) = dxb.as_deref_mut() {
                    dcol.resize(kk * np, 0.0);
                    unsafe {
                        matrixmultiply::sgemm(
                            kk, self.cout, np, 1.0,
                            self.weight.value.as_ptr(), 1, kk as isize,
                            dyb.as_ptr().add(r0 * s[2]), sp as isize, 1,
                            0.0, dcol.as_mut_ptr(), np as isize, 1,
                        );
                    }
                    col2im(&dcol, self.cin, s, self.kernel, self.padding, r0, r1, dxb);
                }
            }
        }
        dx
    }

    pub fn params_mut(&mut self) -> [&mut Param; 2] {
        [&mut self.weight, &mut self.bias]
    }

    pub fn params(&self) -> [&Param; 2] {
        [&self.weight, &self.bias]
    }
}

/// Source index along an axis of length `n`, or `None` for a zero.
fn source(i: isize, n: usize, padding: Padding) -> Option<usize> {
    if (0..n as isize).contains(&i) {
        Some(i as usize)
    } else {
        match padding {
            Padding::Zero => None,
            Padding::Reflect => Some(reflect_index(i, n)),
        }
    }
}

/// Unfolds output rows `[r0, r1)` (a row is one `(z, y)` pair) into a
/// `(cin * kvol, positions)` matrix.
#[allow(clippy::too_many_arguments)]
fn im2col(
    x: &[f32],
    cin: usize,
    s: [usize; 3],
    k: [usize; 3],
    padding: Padding,
    r0: usize,
    r1: usize,
    col: &mut Vec<f32>,
) {
    let np = (r1 - r0) * s[2];
    let kvol: usize = k.iter().product();
    col.resize(cin * kvol * np, 0.0);
    let pad = [k[0] / 2, k[1] / 2, k[2] / 2];
    let sp = s[0] * s[1] * s[2];
    let mut kk = 0;
    for c in 0..cin {
        let xc = &x[c * sp..][..sp];
        for a in 0..k[0] {
            for b in 0..k[1] {
                for e in 0..k[2] {
                    let dst = &mut col[kk * np..][..np];
                    kk += 1;
                    for (ri, r) in (r0..r1).enumerate() {
                        let seg = &mut dst[ri * s[2]..][..s[2]];
                        let (z, y) = (r / s[1], r % s[1]);
                        let sz = source(z as isize + a as isize - pad[0] as isize, s[0], padding);
                        let sy = source(y as isize + b as isize - pad[1] as isize, s[1], padding);
                        let (Some(sz), Some(sy)) = (sz, sy) else {
                            seg.iter_mut().for_each(|v| *v = 0.0);
                            continue;
                        };
                        let src = &xc[(sz * s[1] + sy) * s[2]..][..s[2]];
                        copy_shifted(src, seg, e as isize - pad[2] as isize, padding);
                    }
                }
            }
        }
    }
}

/// In-range part `[lo, hi)` of `dst[x] = src[x + shift]`.
fn overlap(w: usize, shift: isize) -> (usize, usize) {
    let w = w as isize;
    ((-shift).clamp(0, w) as usize, (w - shift).clamp(0, w) as usize)
}

/// `dst[x] = src[x + shift]`, padded outside `src`.
fn copy_shifted(src: &[f32], dst: &mut [f32], shift: isize, padding: Padding) {
    let (lo, hi) = overlap(src.len(), shift);
    if lo < hi {
        let s0 = (lo as isize + shift) as usize;
        dst[lo..hi].copy_from_slice(&src[s0..s0 + (hi - lo)]);
    }
    for x in (0..dst.len()).filter(|x| !(lo..hi).contains(x)) {
        dst[x] = source(x as isize + shift, src.len(), padding).map_or(0.0, |i| src[i]);
    }
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the input,
/// folding padded positions onto their sources.
#[allow(clippy::too_many_arguments)]
fn col2im(
    dcol: &[f32],
    cin: usize,
    s: [usize; 3],
    k: [usize; 3],
    padding: Padding,
    r0: usize,
    r1: usize,
    dx: &mut [f32],
) {
    let np = (r1 - r0) * s[2];
    let pad = [k[0] / 2, k[1] / 2, k[2] / 2];
    let sp = s[0] * s[1] * s[2];
    let w = s[2];
    let mut kk = 0;
    for c in 0..cin {
        let dxc = &mut dx[c * sp..][..sp];
        for a in 0..k[0] {
            for b in 0..k[1] {
                for e in 0..k[2] {
                    let src = &dcol[kk * np..][..np];
                    kk += 1;
                    let shift = e as isize - pad[2] as isize;
                    let (lo, hi) = overlap(w, shift);
                    for (ri, r) in (r0..r1).enumerate() {
                        let (z, y) = (r / s[1], r % s[1]);
                        let sz = source(z as isize + a as isize - pad[0] as isize, s[0], padding);
                        let sy = source(y as isize + b as isize - pad[1] as isize, s[1], padding);
                        let (Some(sz), Some(sy)) = (sz, sy) else { continue };
                        let seg = &src[ri * w..][..w];
                        let row = &mut dxc[(sz * s[1] + sy) * w..][..w];
                        if lo < hi {
                            let s0 = (lo as isize + shift) as usize;
                            for (d, &g) in row[s0..s0 + (hi - lo)].iter_mut().zip(&seg[lo..hi]) {
                                *d += g;
                            }
                        }
                        if padding == Padding::Reflect {
                            for x in (0..w).filter(|x| !(lo..hi).contains(x)) {
                                row[reflect_index(x as isize + shift, w)] += seg[x];
                            }
                        }
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    /// Per-channel statistics over batch and space; running averages at
    /// inference.
    Batch,
    /// Per-sample, per-channel statistics over space.
    Instance,
    None,
}

pub const NORM_EPS: f32 = 1e-5;
pub const NORM_MOMENTUM: f32 = 0.1;

/// Affine normalization layer.
#[derive(Debug, Clone)]
pub struct Norm {
    pub kind: NormKind,
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Vec<f32>,
    pub running_var: Vec<f32>,
}

#[derive(Debug, Default)]
pub struct NormCache {
    xhat: Array5<f32>,
    inv_std: Vec<f32>,
}

impl Norm {
    pub fn new(kind: NormKind, channels: usize) -> Self {
        Self {
            kind,
            gamma: Param::new(vec![1.0; channels]),
            beta: Param::new(vec![0.0; channels]),
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
        }
    }

    /// Group `g` of the layout: `(batch * channels)` groups for instance
    /// norm, `channels` groups for batch norm.
    fn groups(&self, n: usize, c: usize) -> usize {
        match self.kind {
            NormKind::Batch => c,
            _ => n * c,
        }
    }

    /// Calls `f(group, contiguous_run)` for every spatial run of each sample/channel.
    fn for_runs<'a>(&self, data: &'a [f32], n: usize, c: usize, sp: usize, mut f: impl FnMut(usize, &'a [f32])) {
        for b in 0..n {
            for ch in 0..c {
                let g = match self.kind {
                    NormKind::Batch => ch,
                    _ => b * c + ch,
                };
                f(g, &data[(b * c + ch) * sp..][..sp]);
            }
        }
    }

    fn group_stats(&self, x: &Array5<f32>) -> (Vec<f32>, Vec<f32>) {
        let (n, c, s) = dims(x);
        let sp: usize = s.iter().product();
        let g = self.groups(n, c);
        let count = (sp * n * c / g) as f64;
        let mut sum = vec![0f64; g];
        self.for_runs(slice(x), n, c, sp, |gi, run| {
            sum[gi] += run.iter().map(|&v| v as f64).sum::<f64>();
        });
        let mean: Vec<f64> = sum.iter().map(|s| s / count).collect();
        let mut ss = vec![0f64; g];
        self.for_runs(slice(x), n, c, sp, |gi, run| {
            let m = mean[gi];
            ss[gi] += run.iter().map(|&v| (v as f64 - m).powi(2)).sum::<f64>();
        });
        (
            mean.iter().map(|&m| m as f32).collect(),
            ss.iter().map(|&s| (s / count) as f32).collect(),
        )
    }

    fn normalize(&self, x: &Array5<f32>, mean: &[f32], var: &[f32], per_channel: bool) -> (Array5<f32>, Array5<f32>, Vec<f32>) {
        let (n, c, s) = dims(x);
        let sp: usize = s.iter().product();
        let inv_std: Vec<f32> = var.iter().map(|&v| 1.0 / (v + NORM_EPS).sqrt()).collect();
        let mut xhat = x.clone();
        let mut y = x.clone();
        let xh = slice_mut(&mut xhat);
        let ys = slice_mut(&mut y);
        for b in 0..n {
            for ch in 0..c {
                let g = if per_channel { ch } else { b * c + ch };
                let off = (b * c + ch) * sp;
                let (m, is) = (mean[g], inv_std[g]);
                let (ga, be) = (self.gamma.value[ch], self.beta.value[ch]);
                for i in off..off + sp {
                    let h = (xh[i] - m) * is;
                    xh[i] = h;
                    ys[i] = ga * h + be;
                }
            }
        }
        (y, xhat, inv_std)
    }

    pub fn forward_train(&mut self, x: &Array5<f32>) -> (Array5<f32>, NormCache) {
        if self.kind == NormKind::None {
            return (x.clone(), NormCache::default());
        }
        let (mean, var) = self.group_stats(x);
        if self.kind == NormKind::Batch {
            let (n, _, s) = dims(x);
            let count = (n * s.iter().product::<usize>()) as f32;
            let unbias = if count > 1.0 { count / (count - 1.0) } else { 1.0 };
            for ch in 0..mean.len() {
                self.running_mean[ch] = (1.0 - NORM_MOMENTUM) * self.running_mean[ch] + NORM_MOMENTUM * mean[ch];
                self.running_var[ch] = (1.0 - NORM_MOMENTUM) * self.running_var[ch] + NORM_MOMENTUM * var[ch] * unbias;
            }
        }
        let (y, xhat, inv_std) = self.normalize(x, &mean, &var, self.kind == NormKind::Batch);
        (y, NormCache { xhat, inv_std })
    }

    pub fn forward_eval(&self, x: &Array5<f32>) -> Array5<f32> {
        match self.kind {
            NormKind::None => x.clone(),
            NormKind::Batch => self.normalize(x, &self.running_mean, &self.running_var, true).0,
            NormKind::Instance => {
                let (mean, var) = self.group_stats(x);
                self.normalize(x, &mean, &var, false).0
            }
        }
    }

    pub fn backward(&mut self, cache: &NormCache, dy: &Array5<f32>) -> Array5<f32> {
        if self.kind == NormKind::None {
            return dy.clone();
        }
        let (n, c, s) = dims(dy);
        let sp: usize = s.iter().product();
        let g = self.groups(n, c);
        let count = (n * c * sp / g) as f32;
        let xh = slice(&cache.xhat);
        let dys = slice(dy);
        // Per-group sums of dxhat and dxhat * xhat.
        let mut s1 = vec![0f64; g];
        let mut s2 = vec![0f64; g];
        for b in 0..n {
            for ch in 0..c {
                let gi = if self.kind == NormKind::Batch { ch } else { b * c + ch };
                let off = (b * c + ch) * sp;
                let ga = self.gamma.value[ch];
                let (mut dg, mut db) = (0f64, 0f64);
                for i in off..off + sp {
                    let d = dys[i] as f64;
                    dg += d * xh[i] as f64;
                    db += d;
                }
                self.gamma.grad[ch] += dg as f32;
                self.beta.grad[ch] += db as f32;
                s1[gi] += db * ga as f64;
                s2[gi] += dg * ga as f64;
            }
        }
        let mut dx = Array5::zeros(dy.raw_dim());
        let dxs = slice_mut(&mut dx);
        for b in 0..n {
            for ch in 0..c {
                let gi = if self.kind == NormKind::Batch { ch } else { b * c + ch };
                let off = (b * c + ch) * sp;
                let ga = self.gamma.value[ch];
                let is = cache.inv_std[gi];
                let m1 = (s1[gi] / count as f64) as f32;
                let m2 = (s2[gi] / count as f64) as f32;
                for i in off..off + sp {
                    dxs[i] = is * (ga * dys[i] - m1 - xh[i] * m2);
                }
            }
        }
        dx
    }

    pub fn params_mut(&mut self) -> [&mut Param; 2] {
        [&mut self.gamma, &mut self.beta]
    }

    pub fn params(&self) -> [&Param; 2] {
        [&self.gamma, &self.beta]
    }
}

pub fn relu(mut x: Array5<f32>) -> Array5<f32> {
    x.mapv_inplace(|v| v.max(0.0));
    x
}

/// Gradient through ReLU given its output.
pub fn relu_backward(y: &Array5<f32>, mut dy: Array5<f32>) -> Array5<f32> {
    ndarray::Zip::from(&mut dy).and(y).for_each(|d, &v| {
        if v <= 0.0 {
            *d = 0.0
        }
    });
    dy
}

/// Max-pooling by `factor` per spatial axis; returns flat argmax indices.
pub fn max_pool(x: &Array5<f32>, factor: [usize; 3]) -> (Array5<f32>, Vec<u32>) {
    let (n, c, s) = dims(x);
    let o = [s[0] / factor[0], s[1] / factor[1], s[2] / factor[2]];
    let mut y = Array5::zeros((n, c, o[0], o[1], o[2]));
    let mut arg = vec![0u32; y.len()];
    let xs = slice(x);
    let ys = slice_mut(&mut y);
    let sp = s[0] * s[1] * s[2];
    let op = o[0] * o[1] * o[2];
    for nc in 0..n * c {
        let xb = &xs[nc * sp..][..sp];
        for z in 0..o[0] {
            for yy in 0..o[1] {
                for xx in 0..o[2] {
                    let mut best = f32::NEG_INFINITY;
                    let mut best_i = 0;
                    for a in 0..factor[0] {
                        for b in 0..factor[1] {
                            for e in 0..factor[2] {
                                let i = ((z * factor[0] + a) * s[1] + yy * factor[1] + b) * s[2] + xx * factor[2] + e;
                                if xb[i] > best {
                                    best = xb[i];
                                    best_i = i;
                                }
                            }
                        }
                    }
                    let oi = nc * op + (z * o[1] + yy) * o[2] + xx;
                    ys[oi] = best;
                    arg[oi] = (nc * sp + best_i) as u32;
                }
            }
        }
    }
    (y, arg)
}

pub fn max_pool_backward(dy: &Array5<f32>, arg: &[u32], input_shape: (usize, usize, usize, usize, usize)) -> Array5<f32> {
    let mut dx = Array5::zeros(input_shape);
    let dxs = slice_mut(&mut dx);
    for (&g, &i) in slice(dy).iter().zip(arg) {
        dxs[i as usize] += g;
    }
    dx
}

/// Nearest-neighbour upsampling by `factor` per spatial axis.
pub fn upsample(x: &Array5<f32>, factor: [usize; 3]) -> Array5<f32> {
    let (n, c, s) = dims(x);
    let o = [s[0] * factor[0], s[1] * factor[1], s[2] * factor[2]];
    let mut y = Array5::zeros((n, c, o[0], o[1], o[2]));
    let xs = slice(x);
    let ys = slice_mut(&mut y);
    let (sp, op) = (s.iter().product::<usize>(), o.iter().product::<usize>());
    for nc in 0..n * c {
        for z in 0..o[0] {
            for yy in 0..o[1] {
                let src = &xs[nc * sp + ((z / factor[0]) * s[1] + yy / factor[1]) * s[2]..][..s[2]];
                let dst = &mut ys[nc * op + (z * o[1] + yy) * o[2]..][..o[2]];
                for (xx, d) in dst.iter_mut().enumerate() {
                    *d = src[xx / factor[2]];
                }
            }
        }
    }
    y
}

pub fn upsample_backward(dy: &Array5<f32>, factor: [usize; 3]) -> Array5<f32> {
    let (n, c, o) = dims(dy);
    let s = [o[0] / factor[0], o[1] / factor[1], o[2] / factor[2]];
    let mut dx = Array5::zeros((n, c, s[0], s[1], s[2]));
    let dys = slice(dy);
    let dxs = slice_mut(&mut dx);
    let (sp, op) = (s.iter().product::<usize>(), o.iter().product::<usize>());
    for nc in 0..n * c {
        for z in 0..o[0] {
            for yy in 0..o[1] {
                let src = &dys[nc * op + (z * o[1] + yy) * o[2]..][..o[2]];
                let dst = &mut dxs[nc * sp + ((z / factor[0]) * s[1] + yy / factor[1]) * s[2]..][..s[2]];
                for (xx, &g) in src.iter().enumerate() {
                    dst[xx / factor[2]] += g;
                }
            }
        }
    }
    dx
}

/// Concatenates along the channel axis.
pub fn concat_channels(a: &Array5<f32>, b: &Array5<f32>) -> Array5<f32> {
    ndarray::concatenate(ndarray::Axis(1), &[a.view(), b.view()])
        .expect("matching batch and spatial dims")
        .as_standard_layout()
        .into_owned()
}

/// Splits a channel-concatenated gradient back into its two parts.
pub fn split_channels(d: &Array5<f32>, first: usize) -> (Array5<f32>, Array5<f32>) {
    use ndarray::s;
    (
        d.slice(s![.., ..first, .., .., ..]).as_standard_layout().into_owned(),
        d.slice(s![.., first.., .., .., ..]).as_standard_layout().into_owned(),
    )
}
