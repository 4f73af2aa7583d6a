//! Single-image self-supervised training.
//!
//! Each step draws `batch_size` random patches from the standardized image,
//! masks a fresh pixel subset per patch, runs the masked and/or unmasked
//! forward passes the loss needs, reconvolves the outputs with the PSF, and
//! applies one Adam update. All randomness for step `s`, slot `k` comes from
//! streams derived from `(seed, s, k)`, so results do not depend on how the
//! batch is prepared.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use ndarray::{Array5, ArrayD, Axis, IxDyn, Slice};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fftconv::{ConvBackend, Convolver, Padding};
use crate::losses::{composite_loss_with_grad, LossBreakdown, LossConfig, LossInputs};
use crate::masking::{sample_mask, MaskMode, MaskSet, DEFAULT_MASK_FRACTION, DEFAULT_MASK_SIGMA};
use crate::model::{Adam, AdamHyper, Checkpoint, UNet, UNetConfig};
use crate::psf::PsfKernel;
use crate::tensor::{pad_reflect, standardize, Image, NormStats, SeededRng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub dims: usize,
    pub patch_size: usize,
    pub batch_size: usize,
    pub total_steps: u64,
    pub lr0: f64,
    pub lr_decay: f64,
    pub lr_decay_every: u64,
    pub mask_fraction: f64,
    pub mask_sigma: f64,
    pub mask_mode: MaskMode,
    pub loss: LossConfig,
    pub network: UNetConfig,
    pub seed: u64,
    pub log_every: u64,
    /// 0 disables intermediate checkpoints.
    pub checkpoint_every: u64,
    pub conv_backend: ConvBackend,
}

impl TrainConfig {
    /// Full-scale defaults for 2D or 3D data.
    pub fn default_for(dims: usize) -> Self {
        let three = dims == 3;
        Self {
            dims: if three { 3 } else { 2 },
            patch_size: if three { 64 } else { 128 },
            batch_size: if three { 4 } else { 16 },
            total_steps: if three { 15_000 } else { 3_000 },
            lr0: 4e-4,
            lr_decay: 0.5,
            lr_decay_every: if three { 2_000 } else { 500 },
            mask_fraction: DEFAULT_MASK_FRACTION,
            mask_sigma: DEFAULT_MASK_SIGMA,
            mask_mode: MaskMode::Additive,
            loss: LossConfig::noise2same_d(),
            network: UNetConfig::default_for(dims),
            seed: 0,
            log_every: 10,
            checkpoint_every: if three { 2_000 } else { 500 },
            conv_backend: ConvBackend::Auto,
        }
    }

    /// Defaults for the `dims` named in `overrides` (2 if absent), with the
    /// overrides applied on top.
    pub fn from_overrides(overrides: toml::Value) -> Result<Self> {
        let dims = overrides
            .get("dims")
            .and_then(|v| v.as_integer())
            .unwrap_or(2) as usize;
        let cfg: Self = crate::config::layered(&Self::default_for(dims), overrides)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.dims != 2 && self.dims != 3 {
            return bad(format!("dims must be 2 or 3, got {}", self.dims));
        }
        if self.network.dims != self.dims {
            return bad(format!("network dims {} differ from data dims {}", self.network.dims, self.dims));
        }
        self.network.validate()?;
        self.loss.validate()?;
        let div = self.network.divisor();
        if self.patch_size == 0 || self.patch_size % div != 0 {
            return bad(format!("patch_size {} must be a positive multiple of {div}", self.patch_size));
        }
        if self.total_steps < 1 || self.batch_size < 1 {
            return bad("total_steps and batch_size must be at least 1".into());
        }
        if !(self.lr0 > 0.0) || !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) || self.lr_decay_every < 1 {
            return bad("need lr0 > 0, lr_decay in (0, 1] and lr_decay_every >= 1".into());
        }
        if !(self.mask_fraction > 0.0 && self.mask_fraction < 1.0) || !(self.mask_sigma >= 0.0) {
            return bad("need mask_fraction in (0, 1) and mask_sigma >= 0".into());
        }
        if self.log_every < 1 {
            return bad("log_every must be at least 1".into());
        }
        Ok(())
    }
}

/// Step-decay learning rate: `lr0 * decay^floor(step / every)`.
pub fn lr_at(step: u64, cfg: &TrainConfig) -> f64 {
    cfg.lr0 * cfg.lr_decay.powi((step / cfg.lr_decay_every) as i32)
}

/// An element of the hyperoctahedral group: axis permutation then flips.
/// With square/cubic patches this covers all right-angle rotations and
/// mirrorings (8 elements in 2D, 48 in 3D).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Augment {
    pub perm: Vec<usize>,
    pub flips: Vec<bool>,
}

impl Augment {
    pub fn identity(ndim: usize) -> Self {
        Self {
            perm: (0..ndim).collect(),
            flips: vec![false; ndim],
        }
    }

    pub fn random(ndim: usize, rng: &mut SeededRng) -> Self {
        let mut perm: Vec<usize> = (0..ndim).collect();
        for i in (1..ndim).rev() {
            perm.swap(i, rng.gen_range(0..=i));
        }
        let flips = (0..ndim).map(|_| rng.gen_bool(0.5)).collect();
        Self { perm, flips }
    }

    /// Every group element for `ndim` axes.
    pub fn all(ndim: usize) -> Vec<Self> {
        let mut perms: Vec<Vec<usize>> = vec![vec![]];
        for _ in 0..ndim {
            perms = perms
                .into_iter()
                .flat_map(|p| {
                    let free: Vec<usize> = (0..ndim).filter(|a| !p.contains(a)).collect();
                    free.into_iter().map(move |a| {
                        let mut q = p.clone();
                        q.push(a);
                        q
                    })
                })
                .collect();
        }
        let mut out = Vec::new();
        for p in perms {
            for bits in 0..1u32 << ndim {
                out.push(Self {
                    perm: p.clone(),
                    flips: (0..ndim).map(|i| bits >> i & 1 == 1).collect(),
                });
            }
        }
        out
    }

    pub fn apply(&self, data: &ArrayD<f32>) -> ArrayD<f32> {
        let mut v = data.view().permuted_axes(IxDyn(&self.perm));
        for (ax, &f) in self.flips.iter().enumerate() {
            if f {
                v.invert_axis(Axis(ax));
            }
        }
        v.as_standard_layout().into_owned()
    }
}

/// A crop plus the augmentation applied to it.
#[derive(Debug, Clone)]
pub struct Patch {
    pub data: ArrayD<f32>,
    pub origin: Vec<usize>,
    pub augment: Augment,
}

/// Uniform random crop of side `size` followed by a random augmentation.
/// Axes shorter than `size` are reflect-padded first.
pub fn sample_patch(img_std: &Image, size: usize, rng: &mut SeededRng) -> Result<Patch> {
    let padded = pad_to_at_least(img_std.data(), size);
    let data = padded.as_ref().unwrap_or(img_std.data());
    let mut origin = Vec::with_capacity(data.ndim());
    let mut view = data.view();
    for (ax, &n) in data.shape().iter().enumerate() {
        let o = rng.gen_range(0..=n - size);
        origin.push(o);
        view.slice_axis_inplace(Axis(ax), Slice::from(o..o + size));
    }
    let augment = Augment::random(data.ndim(), rng);
    let data = augment.apply(&view.to_owned());
    Ok(Patch { data, origin, augment })
}

fn pad_to_at_least(data: &ArrayD<f32>, size: usize) -> Option<ArrayD<f32>> {
    if data.shape().iter().all(|&n| n >= size) {
        return None;
    }
    let pads: Vec<(usize, usize)> = data
        .shape()
        .iter()
        .map(|&n| {
            let extra = size.saturating_sub(n);
            (extra / 2, extra - extra / 2)
        })
        .collect();
    Some(pad_reflect(data, &pads))
}

/// One row of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: u64,
    pub lr: f64,
    pub loss: LossBreakdown,
    pub wall_ms: f64,
}

impl LogRow {
    pub fn csv_header() -> String {
        format!("step,lr,{},wall_ms", LossBreakdown::CSV_HEADER)
    }

    pub fn csv_row(&self) -> String {
        format!("{},{:.6e},{},{:.3}", self.step, self.lr, self.loss.csv_fields(), self.wall_ms)
    }
}

/// A prepared minibatch.
pub struct Batch {
    /// `(batch, 1, d, h, w)` standardized patches.
    pub x: Array5<f32>,
    /// Same patches with masked pixels perturbed.
    pub x_masked: Array5<f32>,
    pub masks: Vec<MaskSet>,
}

impl Batch {
    /// Mask positions as flat indices into the whole batch.
    pub fn flat_mask(&self) -> Vec<usize> {
        let per = self.x.len() / self.x.shape()[0];
        self.masks
            .iter()
            .enumerate()
            .flat_map(|(b, m)| m.indices().iter().map(move |&j| b * per + j))
            .collect()
    }
}

/// Training state for one image.
pub struct Trainer {
    cfg: TrainConfig,
    model: UNet,
    opt: Adam,
    conv: Convolver,
    image: Image,
    stats: NormStats,
    step: u64,
}

impl Trainer {
    pub fn new(img: &Image, psf: PsfKernel, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let model = UNet::new(cfg.network.clone())?;
        let opt = Adam::new(&model.params(), AdamHyper::default());
        Self::assemble(img, psf, cfg, model, opt, 0, None)
    }

    /// Continues from a checkpoint written by [`Trainer::checkpoint`].
    pub fn resume(img: &Image, psf: PsfKernel, cfg: TrainConfig, ckpt: Checkpoint) -> Result<Self> {
        cfg.validate()?;
        if ckpt.model.config() != &cfg.network {
            return Err(Error::Checkpoint("checkpoint network differs from the training config".into()));
        }
        let opt = match ckpt.optimizer {
            Some(o) => o,
            None => Adam::new(&ckpt.model.params(), AdamHyper::default()),
        };
        Self::assemble(img, psf, cfg, ckpt.model, opt, ckpt.step, Some(ckpt.stats))
    }

    fn assemble(
        img: &Image,
        psf: PsfKernel,
        cfg: TrainConfig,
        model: UNet,
        opt: Adam,
        step: u64,
        stats: Option<NormStats>,
    ) -> Result<Self> {
        if img.ndim() != cfg.dims || psf.ndim() != cfg.dims {
            return Err(Error::DimMismatch {
                image: img.ndim(),
                kernel: psf.ndim(),
            });
        }
        if img.shape().iter().any(|&n| n < cfg.patch_size) {
            warn!(
                "image {:?} is smaller than patch size {}; reflect-padding for sampling",
                img.shape(),
                cfg.patch_size
            );
        }
        // Statistics come from the whole image once and are reused for
        // every patch and for inference.
        let (image, stats) = match stats {
            Some(s) => (crate::tensor::apply_standardize(img, &s), s),
            None => standardize(img)?,
        };
        let conv = Convolver::new(psf, cfg.conv_backend, Padding::Reflect);
        Ok(Self {
            cfg,
            model,
            opt,
            conv,
            image,
            stats,
            step,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn model(&self) -> &UNet {
        &self.model
    }

    pub fn stats(&self) -> NormStats {
        self.stats
    }

    /// Optimizer steps completed.
    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn is_done(&self) -> bool {
        self.step >= self.cfg.total_steps
    }

    /// Patches and masks for `step`, independent of any other step.
    pub fn make_batch(&self, step: u64) -> Result<Batch> {
        let n = self.cfg.batch_size;
        let p = self.cfg.patch_size;
        let d = if self.cfg.dims == 3 { p } else { 1 };
        let mut x = Array5::zeros((n, 1, d, p, p));
        let mut x_masked = x.clone();
        let mut masks = Vec::with_capacity(n);
        for slot in 0..n {
            let mut rng = SeededRng::derive(self.cfg.seed, "train/patch", &[step, slot as u64]);
            let patch = sample_patch(&self.image, p, &mut rng)?;
            let mut mrng = SeededRng::derive(self.cfg.seed, "train/mask", &[step, slot as u64]);
            let mask = sample_mask(patch.data.shape(), self.cfg.mask_fraction, &mut mrng)?
                .with_noise(self.cfg.mask_sigma, self.cfg.mask_mode);
            let flat = patch.data.as_slice().expect("standard layout");
            let mut masked = flat.to_vec();
            mask.perturb(&mut masked, &mut mrng)?;
            x.index_axis_mut(Axis(0), slot)
                .as_slice_mut()
                .expect("standard layout")
                .copy_from_slice(flat);
            x_masked
                .index_axis_mut(Axis(0), slot)
                .as_slice_mut()
                .expect("standard layout")
                .copy_from_slice(&masked);
            masks.push(mask);
        }
        Ok(Batch { x, x_masked, masks })
    }

    fn reconvolve(&self, f: &Array5<f32>) -> Result<Array5<f32>> {
        let g = self.conv.apply(&f.clone().into_dyn())?;
        Ok(g.into_dimensionality().expect("shape preserved"))
    }

    fn adjoint(&self, dg: Vec<f32>, shape: &[usize]) -> Result<Vec<f32>> {
        let dg = ArrayD::from_shape_vec(IxDyn(shape), dg).expect("gradient matches tensor shape");
        Ok(self.conv.adjoint(&dg)?.into_raw_vec_and_offset().0)
    }

    /// One optimizer update on `batch`.
    pub fn train_step(&mut self, batch: &Batch) -> Result<LossBreakdown> {
        let loss = self.cfg.loss;
        let shape = batch.x.shape().to_vec();
        let mask = batch.flat_mask();
        self.model.zero_grad();

        let masked = if loss.needs_masked_pass() {
            let (f, cache) = self.model.forward_train(&batch.x_masked)?;
            let g = self.reconvolve(&f)?;
            Some((f, g, cache))
        } else {
            None
        };
        let unmasked = if loss.needs_unmasked_pass() {
            let (f, cache) = self.model.forward_train(&batch.x)?;
            let g = self.reconvolve(&f)?;
            Some((f, g, cache))
        } else {
            None
        };
        let slice = |a: &Array5<f32>| a.as_slice().expect("standard layout").to_vec();
        let (fm, gm) = masked.as_ref().map(|(f, g, _)| (slice(f), slice(g))).unzip();
        let (fu, gu) = unmasked.as_ref().map(|(f, g, _)| (slice(f), slice(g))).unzip();
        let inputs = LossInputs {
            x: batch.x.as_slice().expect("standard layout"),
            f_unmasked: fu.as_deref(),
            f_masked: fm.as_deref(),
            g_unmasked: gu.as_deref(),
            g_masked: gm.as_deref(),
            mask: Some(&mask),
            stats: self.stats,
        };
        let (breakdown, grads) = composite_loss_with_grad(&inputs, &loss)?;
        if !breakdown.is_finite() {
            return Err(Error::NonFiniteLoss {
                step: self.step as usize,
                breakdown: breakdown.to_string(),
            });
        }

        let combine = |df: Option<Vec<f32>>, dg: Option<Vec<f32>>| -> Result<Option<Vec<f32>>> {
            let dg = dg.map(|g| self.adjoint(g, &shape)).transpose()?;
            Ok(match (df, dg) {
                (Some(mut a), Some(b)) => {
                    a.iter_mut().zip(b).for_each(|(a, b)| *a += b);
                    Some(a)
                }
                (a, b) => a.or(b),
            })
        };
        let d_masked = combine(grads.f_masked, grads.g_masked)?;
        let d_unmasked = combine(grads.f_unmasked, grads.g_unmasked)?;
        let to5 = |v: Vec<f32>| Array5::from_shape_vec(batch.x.raw_dim(), v).expect("batch shape");
        if let (Some((_, _, cache)), Some(d)) = (&masked, d_masked) {
            self.model.backward(cache, &to5(d));
        }
        if let (Some((_, _, cache)), Some(d)) = (&unmasked, d_unmasked) {
            self.model.backward(cache, &to5(d));
        }
        let lr = lr_at(self.step, &self.cfg) as f32;
        self.opt.step(self.model.params_mut(), lr)?;
        self.step += 1;
        Ok(breakdown)
    }

    /// Runs the next step and returns its log row.
    pub fn advance(&mut self) -> Result<LogRow> {
        let t = Instant::now();
        let step = self.step;
        let lr = lr_at(step, &self.cfg);
        let batch = self.make_batch(step)?;
        let loss = self.train_step(&batch)?;
        Ok(LogRow {
            step,
            lr,
            loss,
            wall_ms: t.elapsed().as_secs_f64() * 1e3,
        })
    }

    /// Snapshot including optimizer state, suitable for resuming.
    pub fn checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new(self.model.clone(), self.stats, self.step);
        ck.optimizer = Some(self.opt.clone());
        ck.extra = serde_json::to_value(&self.cfg).unwrap_or(serde_json::Value::Null);
        ck
    }

    pub fn into_checkpoint(self) -> Checkpoint {
        let mut ck = Checkpoint::new(self.model, self.stats, self.step);
        ck.extra = serde_json::to_value(&self.cfg).unwrap_or(serde_json::Value::Null);
        ck.optimizer = Some(self.opt);
        ck
    }
}

/// Files written by [`train`] under its output directory.
#[derive(Debug, Clone)]
pub struct TrainPaths {
    pub checkpoint: PathBuf,
    pub log: PathBuf,
}

impl TrainPaths {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            checkpoint: dir.join("model.ckpt"),
            log: dir.join("train_log.csv"),
        }
    }
}

/// Result of a complete training run.
#[derive(Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    /// Rows logged during this invocation.
    pub log: Vec<LogRow>,
    pub seconds: f64,
}

/// Trains to `total_steps`. With `out`, the log is appended as CSV and the
/// checkpoint is rewritten every `checkpoint_every` steps and at the end;
/// an existing checkpoint there is resumed from.
pub fn train(img: &Image, psf: &PsfKernel, cfg: &TrainConfig, out: Option<&TrainPaths>) -> Result<TrainOutcome> {
    let start = Instant::now();
    let mut trainer = match out.filter(|p| p.checkpoint.exists()) {
        Some(paths) => {
            let ck = Checkpoint::load(&paths.checkpoint)?;
            info!("resuming from {} at step {}", paths.checkpoint.display(), ck.step);
            Trainer::resume(img, psf.clone(), cfg.clone(), ck)?
        }
        None => Trainer::new(img, psf.clone(), cfg.clone())?,
    };
    let mut log_file = match out {
        Some(paths) => Some(open_log(&paths.log, trainer.step() > 0)?),
        None => None,
    };
    let mut log = Vec::new();
    while !trainer.is_done() {
        let row = trainer.advance()?;
        if row.step % cfg.log_every == 0 {
            if let Some((f, path)) = log_file.as_mut() {
                writeln!(f, "{}", row.csv_row()).map_err(|e| Error::io(&*path, e))?;
            }
            log::debug!("step {} lr {:.2e} {}", row.step, row.lr, row.loss);
            log.push(row);
        }
        let done = trainer.step();
        if let Some(paths) = out {
            if cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 && !trainer.is_done() {
                trainer.checkpoint().save(&paths.checkpoint)?;
            }
        }
    }
    let checkpoint = trainer.into_checkpoint();
    if let Some(paths) = out {
        checkpoint.save(&paths.checkpoint)?;
    }
    Ok(TrainOutcome {
        checkpoint,
        log,
        seconds: start.elapsed().as_secs_f64(),
    })
}

fn open_log(path: &Path, append: bool) -> Result<(fs::File, PathBuf)> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let exists = path.exists();
    let mut f = OpenOptions::new()
        .create(true)
        .append(append)
        .write(true)
        .truncate(!append)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    if !append || !exists {
        writeln!(f, "{}", LogRow::csv_header()).map_err(|e| Error::io(path, e))?;
    }
    Ok((f, path.to_path_buf()))
}
