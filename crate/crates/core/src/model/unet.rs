//! Encoder/decoder network with skip connections.
//!
//! `depth` counts resolution levels: a depth-3 network pools twice. Widths
//! double per level starting at `base_features`. Inputs must have spatial
//! extents divisible by `2^depth`, which leaves one spare factor of two so
//! that shifts by the divisor are exact translations of the pooling grid.

use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::Array5;
use serde::{Deserialize, Serialize};

use super::layers::{
    concat_channels, max_pool, max_pool_backward, relu, relu_backward, split_channels, upsample,
    upsample_backward, Conv, Norm, NormCache, NormKind, Param,
};
use crate::error::{Error, Result};
use crate::fftconv::Padding;
use crate::tensor::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SkipMode {
    Concat,
    Add,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UNetConfig {
    pub dims: usize,
    pub depth: usize,
    pub base_features: usize,
    pub skip_mode: SkipMode,
    pub norm: NormKind,
    /// Border handling of the 3x3 convolutions. Reflect keeps tile borders
    /// close to what the network sees inside a larger image.
    #[serde(default = "zero_padding")]
    pub padding: Padding,
    /// Seed for weight initialization.
    #[serde(default)]
    pub init_seed: u64,
}

fn zero_padding() -> Padding {
    Padding::Zero
}

impl UNetConfig {
    pub fn default_for(dims: usize) -> Self {
        match dims {
            3 => Self {
                dims: 3,
                depth: 3,
                base_features: 48,
                skip_mode: SkipMode::Add,
                norm: NormKind::Instance,
                padding: Padding::Reflect,
                init_seed: 0,
            },
            _ => Self {
                dims: 2,
                depth: 3,
                base_features: 96,
                skip_mode: SkipMode::Concat,
                norm: NormKind::Batch,
                padding: Padding::Reflect,
                init_seed: 0,
            },
        }
    }

    pub fn with_base_features(mut self, base: usize) -> Self {
        self.base_features = base;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims != 2 && self.dims != 3 {
            return Err(Error::Config(format!("network dims must be 2 or 3, got {}", self.dims)));
        }
        if self.depth < 1 || self.depth > 8 {
            return Err(Error::Config(format!("network depth must be in 1..=8, got {}", self.depth)));
        }
        if self.base_features < 1 {
            return Err(Error::Config("base_features must be at least 1".into()));
        }
        Ok(())
    }

    /// Required divisor of every spatial extent.
    pub fn divisor(&self) -> usize {
        1 << self.depth
    }

    pub fn widths(&self) -> Vec<usize> {
        (0..self.depth).map(|i| self.base_features << i).collect()
    }

    fn kernel(&self) -> [usize; 3] {
        if self.dims == 3 {
            [3, 3, 3]
        } else {
            [1, 3, 3]
        }
    }

    fn pool(&self) -> [usize; 3] {
        if self.dims == 3 {
            [2, 2, 2]
        } else {
            [1, 2, 2]
        }
    }
}

/// Convolution, normalization, ReLU.
#[derive(Debug, Clone)]
struct Block {
    conv: Conv,
    norm: Norm,
}

struct BlockCache {
    input: Array5<f32>,
    norm: NormCache,
    output: Array5<f32>,
}

impl Block {
    fn new(cin: usize, cout: usize, cfg: &UNetConfig, rng: &mut SeededRng) -> Self {
        Self {
            conv: Conv::new(cin, cout, cfg.kernel(), rng).with_padding(cfg.padding),
            norm: Norm::new(cfg.norm, cout),
        }
    }

    fn eval(&self, x: &Array5<f32>) -> Array5<f32> {
        relu(self.norm.forward_eval(&self.conv.forward(x)))
    }

    fn train(&mut self, x: Array5<f32>) -> (Array5<f32>, BlockCache) {
        let z = self.conv.forward(&x);
        let (n, norm) = self.norm.forward_train(&z);
        let y = relu(n);
        let cache = BlockCache {
            input: x,
            norm,
            output: y.clone(),
        };
        (y, cache)
    }

    fn backward(&mut self, cache: &BlockCache, dy: Array5<f32>, need_dx: bool) -> Option<Array5<f32>> {
        let dz = relu_backward(&cache.output, dy);
        let dn = self.norm.backward(&cache.norm, &dz);
        self.conv.backward(&cache.input, &dn, need_dx)
    }

    fn params_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        let [w, b] = self.conv.params_mut();
        let [g, be] = self.norm.params_mut();
        [w, b, g, be].into_iter()
    }

    fn params(&self) -> impl Iterator<Item = &Param> {
        let [w, b] = self.conv.params();
        let [g, be] = self.norm.params();
        [w, b, g, be].into_iter()
    }
}

#[derive(Debug, Clone)]
struct Decoder {
    up: Block,
    a: Block,
    b: Block,
}

/// Activations retained by a training forward pass.
pub struct UNetCache {
    enc: Vec<[BlockCache; 2]>,
    pool_arg: Vec<(Vec<u32>, (usize, usize, usize, usize, usize))>,
    dec: Vec<[BlockCache; 3]>,
    head_in: Array5<f32>,
}

#[derive(Debug)]
pub struct UNet {
    cfg: UNetConfig,
    enc: Vec<[Block; 2]>,
    /// `dec[i]` produces level `i` from level `i + 1`.
    dec: Vec<Decoder>,
    head: Conv,
    forwards: AtomicU64,
}

impl Clone for UNet {
    fn clone(&self) -> Self {
        Self {
            cfg: self.cfg.clone(),
            enc: self.enc.clone(),
            dec: self.dec.clone(),
            head: self.head.clone(),
            forwards: AtomicU64::new(self.forward_count()),
        }
    }
}

impl UNet {
    pub fn new(cfg: UNetConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = SeededRng::derive(cfg.init_seed, "unet/init", &[]);
        let w = cfg.widths();
        let mut enc = Vec::with_capacity(cfg.depth);
        for i in 0..cfg.depth {
            let cin = if i == 0 { 1 } else { w[i - 1] };
            enc.push([Block::new(cin, w[i], &cfg, &mut rng), Block::new(w[i], w[i], &cfg, &mut rng)]);
        }
        let mut dec = Vec::with_capacity(cfg.depth - 1);
        for i in 0..cfg.depth - 1 {
            let below = w[i + 1];
            let (up_out, a_in) = match cfg.skip_mode {
                SkipMode::Concat => (below, below + w[i]),
                SkipMode::Add => (w[i], w[i]),
            };
            dec.push(Decoder {
                up: Block::new(below, up_out, &cfg, &mut rng),
                a: Block::new(a_in, w[i], &cfg, &mut rng),
                b: Block::new(w[i], w[i], &cfg, &mut rng),
            });
        }
        let head = Conv::new(w[0], 1, [1, 1, 1], &mut rng);
        Ok(Self {
            cfg,
            enc,
            dec,
            head,
            forwards: AtomicU64::new(0),
        })
    }

    pub fn config(&self) -> &UNetConfig {
        &self.cfg
    }

    pub fn divisor(&self) -> usize {
        self.cfg.divisor()
    }

    /// Number of forward passes run so far (training and inference).
    pub fn forward_count(&self) -> u64 {
        self.forwards.load(Ordering::Relaxed)
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn check_input(&self, shape: &[usize]) -> Result<()> {
        if shape.len() != 5 || shape[1] != 1 {
            return Err(Error::Shape(format!(
                "network input must be (batch, 1, d, h, w), got {shape:?}"
            )));
        }
        if self.cfg.dims == 2 && shape[2] != 1 {
            return Err(Error::DimMismatch { image: 3, kernel: 2 });
        }
        let div = self.divisor();
        let spatial = if self.cfg.dims == 2 { &shape[3..] } else { &shape[2..] };
        if spatial.iter().any(|&s| s % div != 0) {
            return Err(Error::Divisibility {
                shape: spatial.to_vec(),
                divisor: div,
            });
        }
        Ok(())
    }

    /// Inference pass: batch statistics are frozen, nothing is cached.
    pub fn forward(&self, x: &Array5<f32>) -> Result<Array5<f32>> {
        self.check_input(x.shape())?;
        self.forwards.fetch_add(1, Ordering::Relaxed);
        let pool = self.cfg.pool();
        let last = self.cfg.depth - 1;
        let mut skips = Vec::with_capacity(last);
        let mut h = x.clone();
        for (i, [a, b]) in self.enc.iter().enumerate() {
            h = b.eval(&a.eval(&h));
            if i < last {
                let (p, _) = max_pool(&h, pool);
                skips.push(h);
                h = p;
            }
        }
        for i in (0..last).rev() {
            let d = &self.dec[i];
            let u = d.up.eval(&upsample(&h, pool));
            let joined = self.join(u, &skips[i]);
            h = d.b.eval(&d.a.eval(&joined));
        }
        Ok(self.head.forward(&h))
    }

    /// Training pass: updates batch-norm running statistics and returns the
    /// cache needed by [`UNet::backward`].
    pub fn forward_train(&mut self, x: &Array5<f32>) -> Result<(Array5<f32>, UNetCache)> {
        self.check_input(x.shape())?;
        self.forwards.fetch_add(1, Ordering::Relaxed);
        let pool = self.cfg.pool();
        let last = self.cfg.depth - 1;
        let mut skips = Vec::with_capacity(last);
        let mut enc_cache = Vec::with_capacity(self.cfg.depth);
        let mut pool_arg = Vec::with_capacity(last);
        let mut h = x.clone();
        for i in 0..self.cfg.depth {
            let [a, b] = &mut self.enc[i];
            let (ha, ca) = a.train(h);
            let (hb, cb) = b.train(ha);
            enc_cache.push([ca, cb]);
            h = hb;
            if i < last {
                let sh = h.dim();
                let (p, arg) = max_pool(&h, pool);
                pool_arg.push((arg, sh));
                skips.push(h);
                h = p;
            }
        }
        let mut dec_cache: Vec<Option<[BlockCache; 3]>> = (0..last).map(|_| None).collect();
        for i in (0..last).rev() {
            let (u, cu) = self.dec[i].up.train(upsample(&h, pool));
            let joined = self.join(u, &skips[i]);
            let d = &mut self.dec[i];
            let (ha, ca) = d.a.train(joined);
            let (hb, cb) = d.b.train(ha);
            dec_cache[i] = Some([cu, ca, cb]);
            h = hb;
        }
        let y = self.head.forward(&h);
        let cache = UNetCache {
            enc: enc_cache,
            pool_arg,
            dec: dec_cache.into_iter().map(|c| c.expect("filled above")).collect(),
            head_in: h,
        };
        Ok((y, cache))
    }

    fn join(&self, up: Array5<f32>, skip: &Array5<f32>) -> Array5<f32> {
        match self.cfg.skip_mode {
            SkipMode::Concat => concat_channels(&up, skip),
            SkipMode::Add => up + skip,
        }
    }

    /// Accumulates parameter gradients for output gradient `dy`.
    pub fn backward(&mut self, cache: &UNetCache, dy: &Array5<f32>) {
        let pool = self.cfg.pool();
        let last = self.cfg.depth - 1;
        let mut dh = self
            .head
            .backward(&cache.head_in, dy, true)
            .expect("input gradient requested");
        let mut dskips = Vec::with_capacity(last);
        for i in 0..last {
            let up_channels = self.dec[i].up.conv.cout;
            let [cu, ca, cb] = &cache.dec[i];
            let d = &mut self.dec[i];
            let g = d.b.backward(cb, dh, true).expect("input gradient requested");
            let g = d.a.backward(ca, g, true).expect("input gradient requested");
            let (du, dskip) = match self.cfg.skip_mode {
                SkipMode::Concat => split_channels(&g, up_channels),
                SkipMode::Add => (g.clone(), g),
            };
            dskips.push(dskip);
            let du = d.up.backward(cu, du, true).expect("input gradient requested");
            dh = upsample_backward(&du, pool);
        }
        for i in (0..self.cfg.depth).rev() {
            let [ca, cb] = &cache.enc[i];
            let [a, b] = &mut self.enc[i];
            let g = b.backward(cb, dh, true).expect("input gradient requested");
            let g = a.backward(ca, g, i > 0);
            if i == 0 {
                break;
            }
            let g = g.expect("input gradient requested");
            let (arg, shape) = &cache.pool_arg[i - 1];
            dh = max_pool_backward(&g, arg, *shape) + &dskips[i - 1];
        }
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    /// Trainable tensors in a fixed order.
    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out: Vec<&mut Param> = Vec::new();
        for [a, b] in &mut self.enc {
            out.extend(a.params_mut());
            out.extend(b.params_mut());
        }
        for d in &mut self.dec {
            out.extend(d.up.params_mut());
            out.extend(d.a.params_mut());
            out.extend(d.b.params_mut());
        }
        out.extend(self.head.params_mut());
        out
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut out: Vec<&Param> = Vec::new();
        for [a, b] in &self.enc {
            out.extend(a.params());
            out.extend(b.params());
        }
        for d in &self.dec {
            out.extend(d.up.params());
            out.extend(d.a.params());
            out.extend(d.b.params());
        }
        out.extend(self.head.params());
        out
    }

    fn norms_mut(&mut self) -> Vec<&mut Norm> {
        let mut out: Vec<&mut Norm> = Vec::new();
        for [a, b] in &mut self.enc {
            out.push(&mut a.norm);
            out.push(&mut b.norm);
        }
        for d in &mut self.dec {
            out.push(&mut d.up.norm);
            out.push(&mut d.a.norm);
            out.push(&mut d.b.norm);
        }
        out
    }

    /// Non-trainable state (normalization running statistics), fixed order.
    pub fn buffers(&self) -> Vec<&Vec<f32>> {
        let mut norms: Vec<&Norm> = Vec::new();
        for [a, b] in &self.enc {
            norms.extend([&a.norm, &b.norm]);
        }
        for d in &self.dec {
            norms.extend([&d.up.norm, &d.a.norm, &d.b.norm]);
        }
        norms.into_iter().flat_map(|n| [&n.running_mean, &n.running_var]).collect()
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut Vec<f32>> {
        let mut out = Vec::new();
        for n in self.norms_mut() {
            out.push(&mut n.running_mean);
            out.push(&mut n.running_var);
        }
        out
    }
}
