//! Composite self-supervised objective.
//!
//! Tensors are flat `f32` slices of equal length (a whole batch), and a
//! mask is a list of flat indices into that batch: masked pixels of all
//! samples are pooled into one mean. Reductions accumulate in `f64`.
//!
//! Naming: `f_*` are network outputs (deconvolved representation), `g_*`
//! are those outputs convolved with the PSF, `*_unmasked`/`*_masked` name
//! the forward pass they came from.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::NormStats;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    /// Blind-spot MSE at masked pixels of the masked pass.
    pub lambda_bsp: f64,
    /// Reconstruction MSE of the unmasked pass.
    pub lambda_rec: f64,
    /// Invariance between passes after PSF convolution.
    pub lambda_inv: f64,
    /// Invariance between passes before PSF convolution.
    pub lambda_inv_d: f64,
    /// Range penalty on the reconvolved unmasked output.
    pub lambda_bound: f64,
    /// Range penalty on the deconvolved unmasked output.
    pub lambda_bound_d: f64,
    pub bound_min: f64,
    pub bound_max: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self::noise2same_d()
    }
}

impl LossConfig {
    const ZERO: Self = Self {
        lambda_bsp: 0.0,
        lambda_rec: 0.0,
        lambda_inv: 0.0,
        lambda_inv_d: 0.0,
        lambda_bound: 0.0,
        lambda_bound_d: 0.0,
        bound_min: 0.0,
        bound_max: 1.0,
    };

    /// Blind-spot term only.
    pub fn noise2self() -> Self {
        Self {
            lambda_bsp: 1.0,
            ..Self::ZERO
        }
    }

    /// Reconstruction, reconvolved invariance and reconvolved range terms.
    pub fn noise2same() -> Self {
        Self {
            lambda_rec: 1.0,
            lambda_inv: 2.0,
            lambda_bound: 0.1,
            ..Self::ZERO
        }
    }

    /// Reconstruction plus invariance and range terms on the deconvolved
    /// output.
    pub fn noise2same_d() -> Self {
        Self {
            lambda_rec: 1.0,
            lambda_inv_d: 2.0,
            lambda_bound_d: 0.1,
            ..Self::ZERO
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        name.parse::<LossPreset>().map(LossPreset::config)
    }

    pub fn lambdas(&self) -> [f64; 6] {
        [
            self.lambda_bsp,
            self.lambda_rec,
            self.lambda_inv,
            self.lambda_inv_d,
            self.lambda_bound,
            self.lambda_bound_d,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let l = self.lambdas();
        if l.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Config(format!("loss weights must be finite and >= 0, got {l:?}")));
        }
        if l.iter().all(|&v| v == 0.0) {
            return Err(Error::Config("at least one loss weight must be positive".into()));
        }
        if !(self.bound_min < self.bound_max) {
            return Err(Error::Config(format!(
                "bound_min ({}) must be below bound_max ({})",
                self.bound_min, self.bound_max
            )));
        }
        Ok(())
    }

    /// Whether any term reads the masked forward pass.
    pub fn needs_masked_pass(&self) -> bool {
        self.lambda_bsp > 0.0 || self.lambda_inv > 0.0 || self.lambda_inv_d > 0.0
    }

    /// Whether any term reads the unmasked forward pass.
    pub fn needs_unmasked_pass(&self) -> bool {
        self.lambda_rec > 0.0
            || self.lambda_inv > 0.0
            || self.lambda_inv_d > 0.0
            || self.lambda_bound > 0.0
            || self.lambda_bound_d > 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossPreset {
    Noise2Self,
    Noise2Same,
    Noise2SameD,
}

impl LossPreset {
    pub const ALL: [LossPreset; 3] = [Self::Noise2Self, Self::Noise2Same, Self::Noise2SameD];

    pub fn config(self) -> LossConfig {
        match self {
            Self::Noise2Self => LossConfig::noise2self(),
            Self::Noise2Same => LossConfig::noise2same(),
            Self::Noise2SameD => LossConfig::noise2same_d(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Noise2Self => "noise2self",
            Self::Noise2Same => "noise2same",
            Self::Noise2SameD => "noise2same_d",
        }
    }
}

impl fmt::Display for LossPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '(', ')'], "_").trim_end_matches('_') {
            "noise2self" | "n2s" => Ok(Self::Noise2Self),
            "noise2same" => Ok(Self::Noise2Same),
            "noise2same_d" | "noise2samed" => Ok(Self::Noise2SameD),
            other => Err(Error::Config(format!(
                "unknown loss preset {other:?} (expected noise2self, noise2same or noise2same_d)"
            ))),
        }
    }
}

/// Unweighted term values and the weighted total. Terms that were not
/// computed (zero weight) are reported as 0.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub bsp: f64,
    pub rec: f64,
    pub inv: f64,
    pub inv_d: f64,
    pub bound: f64,
    pub bound_d: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub const CSV_HEADER: &'static str = "bsp,rec,inv,inv_d,bound,bound_d,total";

    pub fn terms(&self) -> [f64; 6] {
        [self.bsp, self.rec, self.inv, self.inv_d, self.bound, self.bound_d]
    }

    pub fn csv_fields(&self) -> String {
        let mut parts: Vec<String> = self.terms().iter().map(|v| format!("{v:.8e}")).collect();
        parts.push(format!("{:.8e}", self.total));
        parts.join(",")
    }

    pub fn is_finite(&self) -> bool {
        self.total.is_finite() && self.terms().iter().all(|v| v.is_finite())
    }
}

impl fmt::Display for LossBreakdown {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "bsp={:.6} rec={:.6} inv={:.6} inv_d={:.6} bound={:.6} bound_d={:.6} total={:.6}",
            self.bsp, self.rec, self.inv, self.inv_d, self.bound, self.bound_d, self.total
        )
    }
}

fn same_len(a: &[f32], b: &[f32]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("loss inputs differ in size: {} vs {}", a.len(), b.len())));
    }
    Ok(())
}

fn check_mask(mask: &[usize], len: usize) -> Result<()> {
    if mask.is_empty() {
        return Err(Error::EmptyMask);
    }
    if let Some(&j) = mask.iter().find(|&&j| j >= len) {
        return Err(Error::Shape(format!("mask index {j} out of range for {len} elements")));
    }
    Ok(())
}

fn masked_sq_sum(a: &[f32], b: &[f32], mask: &[usize]) -> f64 {
    mask.iter()
        .map(|&j| {
            let d = a[j] as f64 - b[j] as f64;
            d * d
        })
        .sum()
}

/// Mean squared error between the masked-pass reconvolution and the input,
/// over masked pixels.
pub fn blind_spot_loss(g_masked: &[f32], x: &[f32], mask: &[usize]) -> Result<f64> {
    same_len(g_masked, x)?;
    check_mask(mask, x.len())?;
    Ok(masked_sq_sum(g_masked, x, mask) / mask.len() as f64)
}

/// Mean squared error over all elements.
pub fn reconstruction_loss(g_unmasked: &[f32], x: &[f32]) -> Result<f64> {
    same_len(g_unmasked, x)?;
    if x.is_empty() {
        return Err(Error::Shape("empty tensor".into()));
    }
    let s: f64 = g_unmasked
        .iter()
        .zip(x)
        .map(|(&a, &b)| {
            let d = a as f64 - b as f64;
            d * d
        })
        .sum();
    Ok(s / x.len() as f64)
}

/// Root of the masked-pixel mean squared difference between two passes.
pub fn invariance_loss(unmasked: &[f32], masked: &[f32], mask: &[usize]) -> Result<f64> {
    same_len(unmasked, masked)?;
    check_mask(mask, masked.len())?;
    Ok((masked_sq_sum(unmasked, masked, mask) / mask.len() as f64).sqrt())
}

/// Mean of `|lo - v| + |v - hi|` over values already in intensity units.
/// Constant `hi - lo` inside the range, linear growth outside.
pub fn boundary_loss(values: &[f32], lo: f64, hi: f64) -> Result<f64> {
    if !(lo < hi) {
        return Err(Error::InvalidArgument(format!("bounds must satisfy lo < hi, got [{lo}, {hi}]")));
    }
    if values.is_empty() {
        return Err(Error::Shape("empty tensor".into()));
    }
    let s: f64 = values
        .iter()
        .map(|&v| {
            let v = v as f64;
            (lo - v).abs() + (v - hi).abs()
        })
        .sum();
    Ok(s / values.len() as f64)
}

/// Boundary loss of standardized values, measured after destandardization.
fn boundary_loss_std(values: &[f32], stats: &NormStats, lo: f64, hi: f64, grad: Option<&mut [f32]>) -> f64 {
    let m = values.len() as f64;
    let mut s = 0.0;
    let scale = stats.std / m;
    let mut grad = grad;
    for (i, &v) in values.iter().enumerate() {
        let u = v as f64 * stats.std + stats.mean;
        s += (lo - u).abs() + (u - hi).abs();
        if let Some(g) = grad.as_deref_mut() {
            g[i] += (scale * (sign(u - lo) + sign(u - hi))) as f32;
        }
    }
    s / m
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Tensors a composite loss may read. Entries are needed only when a term
/// that reads them has a positive weight.
#[derive(Debug, Clone, Copy)]
pub struct LossInputs<'a> {
    /// Standardized network input (noisy observation).
    pub x: &'a [f32],
    pub f_unmasked: Option<&'a [f32]>,
    pub f_masked: Option<&'a [f32]>,
    pub g_unmasked: Option<&'a [f32]>,
    pub g_masked: Option<&'a [f32]>,
    pub mask: Option<&'a [usize]>,
    pub stats: NormStats,
}

/// Gradients of the total with respect to each supplied tensor; `None`
/// where no active term reads the tensor.
#[derive(Debug, Clone, Default)]
pub struct LossGrads {
    pub f_unmasked: Option<Vec<f32>>,
    pub f_masked: Option<Vec<f32>>,
    pub g_unmasked: Option<Vec<f32>>,
    pub g_masked: Option<Vec<f32>>,
}

fn need<'a, T: ?Sized>(v: Option<&'a T>, name: &'static str) -> Result<&'a T> {
    v.ok_or(Error::MissingTensor(name))
}

fn grad_slot(slot: &mut Option<Vec<f32>>, len: usize) -> &mut Vec<f32> {
    slot.get_or_insert_with(|| vec![0.0; len])
}

/// Weighted sum of all active terms.
pub fn composite_loss(inputs: &LossInputs<'_>, cfg: &LossConfig) -> Result<LossBreakdown> {
    evaluate(inputs, cfg, false).map(|(b, _)| b)
}

/// Composite loss and its gradient with respect to the supplied tensors.
pub fn composite_loss_with_grad(inputs: &LossInputs<'_>, cfg: &LossConfig) -> Result<(LossBreakdown, LossGrads)> {
    evaluate(inputs, cfg, true)
}

fn evaluate(inp: &LossInputs<'_>, cfg: &LossConfig, want_grad: bool) -> Result<(LossBreakdown, LossGrads)> {
    cfg.validate()?;
    let x = inp.x;
    let n = x.len();
    let mut b = LossBreakdown::default();
    let mut g = LossGrads::default();

    if cfg.lambda_bsp > 0.0 {
        let gm = need(inp.g_masked, "g_masked")?;
        let mask = need(inp.mask, "mask")?;
        b.bsp = blind_spot_loss(gm, x, mask)?;
        if want_grad {
            let d = grad_slot(&mut g.g_masked, n);
            let c = 2.0 * cfg.lambda_bsp / mask.len() as f64;
            for &j in mask {
                d[j] += (c * (gm[j] as f64 - x[j] as f64)) as f32;
            }
        }
    }
    if cfg.lambda_rec > 0.0 {
        let gu = need(inp.g_unmasked, "g_unmasked")?;
        b.rec = reconstruction_loss(gu, x)?;
        if want_grad {
            let d = grad_slot(&mut g.g_unmasked, n);
            let c = 2.0 * cfg.lambda_rec / n as f64;
            for i in 0..n {
                d[i] += (c * (gu[i] as f64 - x[i] as f64)) as f32;
            }
        }
    }
    let invariance = |lambda: f64,
                          a: Option<&[f32]>,
                          bm: Option<&[f32]>,
                          names: (&'static str, &'static str),
                          ga: &mut Option<Vec<f32>>,
                          gb: &mut Option<Vec<f32>>|
     -> Result<f64> {
        let a = need(a, names.0)?;
        let bm = need(bm, names.1)?;
        let mask = need(inp.mask, "mask")?;
        let v = invariance_loss(a, bm, mask)?;
        if want_grad && v > 0.0 {
            let c = lambda / (mask.len() as f64 * v);
            let (da, db) = (grad_slot(ga, n), grad_slot(gb, n));
            for &j in mask {
                let d = (c * (a[j] as f64 - bm[j] as f64)) as f32;
                da[j] += d;
                db[j] -= d;
            }
        } else if want_grad {
            grad_slot(ga, n);
            grad_slot(gb, n);
        }
        Ok(v)
    };
    if cfg.lambda_inv > 0.0 {
        b.inv = invariance(
            cfg.lambda_inv,
            inp.g_unmasked,
            inp.g_masked,
            ("g_unmasked", "g_masked"),
            &mut g.g_unmasked,
            &mut g.g_masked,
        )?;
    }
    if cfg.lambda_inv_d > 0.0 {
        b.inv_d = invariance(
            cfg.lambda_inv_d,
            inp.f_unmasked,
            inp.f_masked,
            ("f_unmasked", "f_masked"),
            &mut g.f_unmasked,
            &mut g.f_masked,
        )?;
    }
    let (lo, hi) = (cfg.bound_min, cfg.bound_max);
    if cfg.lambda_bound > 0.0 {
        let gu = need(inp.g_unmasked, "g_unmasked")?;
        same_len(gu, x)?;
        let mut tmp = want_grad.then(|| vec![0f32; n]);
        b.bound = boundary_loss_std(gu, &inp.stats, lo, hi, tmp.as_deref_mut());
        if let Some(t) = tmp {
            let d = grad_slot(&mut g.g_unmasked, n);
            d.iter_mut().zip(t).for_each(|(d, t)| *d += cfg.lambda_bound as f32 * t);
        }
    }
    if cfg.lambda_bound_d > 0.0 {
        let fu = need(inp.f_unmasked, "f_unmasked")?;
        same_len(fu, x)?;
        let mut tmp = want_grad.then(|| vec![0f32; n]);
        b.bound_d = boundary_loss_std(fu, &inp.stats, lo, hi, tmp.as_deref_mut());
        if let Some(t) = tmp {
            let d = grad_slot(&mut g.f_unmasked, n);
            d.iter_mut().zip(t).for_each(|(d, t)| *d += cfg.lambda_bound_d as f32 * t);
        }
    }
    b.total = cfg
        .lambdas()
        .iter()
        .zip(b.terms())
        .filter(|(l, _)| **l > 0.0)
        .map(|(l, t)| l * t)
        .sum();
    Ok((b, g))
}
