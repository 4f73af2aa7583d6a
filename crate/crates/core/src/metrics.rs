//! Full-reference quality metrics. All accumulation is in `f64`.

use std::fmt;

use ndarray::{ArrayD, Axis, IxDyn};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Image;

/// Table value standing in for the infinite PSNR of identical images.
pub const PSNR_CAP: f64 = 99.0;
pub const SSIM_WINDOW: usize = 7;
pub const SSIM_SIGMA: f64 = 1.5;
pub const MI_BINS: usize = 256;

fn check_pair(a: &Image, b: &Image) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "metric inputs differ in shape: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

pub fn rmse(a: &Image, b: &Image) -> Result<f64> {
    check_pair(a, b)?;
    let s: f64 = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    Ok((s / a.len() as f64).sqrt())
}

/// Peak signal-to-noise ratio in dB; `+inf` for identical images.
pub fn psnr(a: &Image, b: &Image, data_range: f64) -> Result<f64> {
    if !(data_range > 0.0) {
        return Err(Error::InvalidArgument(format!("data_range must be > 0, got {data_range}")));
    }
    let e = rmse(a, b)?;
    if e == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(20.0 * data_range.log10() - 20.0 * e.log10())
}

/// Normalized 1D Gaussian taps.
fn gaussian_taps(n: usize, sigma: f64) -> Vec<f64> {
    let c = (n as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..n).map(|i| (-(i as f64 - c).powi(2) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

/// Separable valid-mode weighted average along every axis.
fn window_mean(x: &ArrayD<f64>, taps: &[f64]) -> ArrayD<f64> {
    let k = taps.len();
    let mut cur = x.clone();
    for ax in 0..x.ndim() {
        let n = cur.shape()[ax];
        let mut shape = cur.shape().to_vec();
        shape[ax] = n + 1 - k;
        let mut out = ArrayD::<f64>::zeros(IxDyn(&shape));
        for (i, &t) in taps.iter().enumerate() {
            let src = cur.slice_axis(Axis(ax), ndarray::Slice::from(i..i + n + 1 - k));
            out.scaled_add(t, &src);
        }
        cur = out;
    }
    cur
}

/// Mean structural similarity over all positions where a 7-wide Gaussian
/// window (sigma 1.5) fits inside the image. 3D inputs use a 3D window.
pub fn ssim(a: &Image, b: &Image, data_range: f64) -> Result<f64> {
    check_pair(a, b)?;
    if a.shape().iter().any(|&n| n < SSIM_WINDOW) {
        return Err(Error::Shape(format!(
            "ssim needs every axis >= {SSIM_WINDOW}, got {:?}",
            a.shape()
        )));
    }
    if !(data_range > 0.0) {
        return Err(Error::InvalidArgument(format!("data_range must be > 0, got {data_range}")));
    }
    let taps = gaussian_taps(SSIM_WINDOW, SSIM_SIGMA);
    let x = a.data().mapv(|v| v as f64);
    let y = b.data().mapv(|v| v as f64);
    let mx = window_mean(&x, &taps);
    let my = window_mean(&y, &taps);
    let mxx = window_mean(&(&x * &x), &taps);
    let myy = window_mean(&(&y * &y), &taps);
    let mxy = window_mean(&(&x * &y), &taps);
    let c1 = (0.01 * data_range).powi(2);
    let c2 = (0.03 * data_range).powi(2);
    let mut total = 0.0;
    for i in 0..mx.len() {
        let (ux, uy) = (mx.as_slice().unwrap()[i], my.as_slice().unwrap()[i]);
        let vx = mxx.as_slice().unwrap()[i] - ux * ux;
        let vy = myy.as_slice().unwrap()[i] - uy * uy;
        let cxy = mxy.as_slice().unwrap()[i] - ux * uy;
        total += ((2.0 * ux * uy + c1) * (2.0 * cxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
    }
    Ok(total / mx.len() as f64)
}

fn bin_indices(values: &[f64], bins: usize) -> Option<Vec<usize>> {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    if !(hi > lo) {
        return None;
    }
    let scale = bins as f64 / (hi - lo);
    Some(
        values
            .iter()
            .map(|&v| (((v - lo) * scale) as usize).min(bins - 1))
            .collect(),
    )
}

/// Mutual information (nats) of the joint histogram with `bins` equal-width
/// bins over each input's own range. 0 if either input is constant.
fn mi_of(a: &[f64], b: &[f64], bins: usize) -> f64 {
    let (Some(ia), Some(ib)) = (bin_indices(a, bins), bin_indices(b, bins)) else {
        return 0.0;
    };
    let n = a.len() as f64;
    let mut joint = vec![0u64; bins * bins];
    let mut pa = vec![0u64; bins];
    let mut pb = vec![0u64; bins];
    for (&i, &j) in ia.iter().zip(&ib) {
        joint[i * bins + j] += 1;
        pa[i] += 1;
        pb[j] += 1;
    }
    let mut mi = 0.0;
    for i in 0..bins {
        if pa[i] == 0 {
            continue;
        }
        for j in 0..bins {
            let c = joint[i * bins + j];
            if c == 0 {
                continue;
            }
            let pij = c as f64 / n;
            mi += pij * (pij * n * n / (pa[i] as f64 * pb[j] as f64)).ln();
        }
    }
    mi
}

pub fn mutual_information(a: &Image, b: &Image, bins: usize) -> Result<f64> {
    check_pair(a, b)?;
    if bins < 2 {
        return Err(Error::InvalidArgument("need at least 2 bins".into()));
    }
    let fa: Vec<f64> = a.as_slice().iter().map(|&v| v as f64).collect();
    let fb: Vec<f64> = b.as_slice().iter().map(|&v| v as f64).collect();
    Ok(mi_of(&fa, &fb, bins))
}

/// `log(1 + |DFT|)` with the zero frequency moved to the centre.
pub fn log_spectrum(img: &Image) -> ArrayD<f64> {
    let mut data = img.data().mapv(|v| Complex::new(v as f64, 0.0));
    let mut planner = FftPlanner::<f64>::new();
    for ax in 0..data.ndim() {
        let n = data.shape()[ax];
        let fft = planner.plan_fft_forward(n);
        let mut buf = vec![Complex::new(0.0, 0.0); n];
        for mut lane in data.lanes_mut(Axis(ax)) {
            buf.iter_mut().zip(lane.iter()).for_each(|(b, v)| *b = *v);
            fft.process(&mut buf);
            lane.iter_mut().zip(&buf).for_each(|(v, b)| *v = *b);
        }
    }
    let mag = data.mapv(|c| (1.0 + c.norm()).ln());
    let shape = mag.shape().to_vec();
    ArrayD::from_shape_fn(IxDyn(&shape), |idx| {
        let src: Vec<usize> = shape
            .iter()
            .enumerate()
            .map(|(ax, &n)| (idx[ax] + n - n / 2) % n)
            .collect();
        mag[IxDyn(&src)]
    })
}

/// Mutual information of the two images' centred log-magnitude spectra.
pub fn spectral_mutual_information(a: &Image, b: &Image, bins: usize) -> Result<f64> {
    check_pair(a, b)?;
    if bins < 2 {
        return Err(Error::InvalidArgument("need at least 2 bins".into()));
    }
    let sa = log_spectrum(a);
    let sb = log_spectrum(b);
    Ok(mi_of(
        sa.as_slice().expect("standard layout"),
        sb.as_slice().expect("standard layout"),
        bins,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Metric {
    Psnr,
    Ssim,
    Mi,
    Smi,
    Rmse,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Psnr => "PSNR",
            Metric::Ssim => "SSIM",
            Metric::Mi => "MI",
            Metric::Smi => "SMI",
            Metric::Rmse => "RMSE",
        }
    }

    pub fn higher_is_better(self) -> bool {
        !matches!(self, Metric::Rmse)
    }

    /// Metrics reported for `dims`-dimensional data, in table order.
    pub fn for_dims(dims: usize) -> &'static [Metric] {
        if dims == 2 {
            &[Metric::Psnr, Metric::Ssim, Metric::Mi, Metric::Smi, Metric::Rmse]
        } else {
            &[Metric::Psnr, Metric::Ssim, Metric::Rmse]
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One table row of metric values, in table order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub values: Vec<(Metric, f64)>,
}

impl MetricRow {
    pub fn get(&self, m: Metric) -> Option<f64> {
        self.values.iter().find(|(k, _)| *k == m).map(|(_, v)| *v)
    }

    pub fn metrics(&self) -> Vec<Metric> {
        self.values.iter().map(|(m, _)| *m).collect()
    }
}

/// Metrics of one restored image against its clean reference, with data
/// range 1 and PSNR capped at [`PSNR_CAP`].
pub fn evaluate_pair(pred: &Image, clean: &Image) -> Result<MetricRow> {
    check_pair(pred, clean)?;
    let values = Metric::for_dims(pred.ndim())
        .iter()
        .map(|&m| {
            let v = match m {
                Metric::Psnr => psnr(pred, clean, 1.0)?.min(PSNR_CAP),
                Metric::Ssim => ssim(pred, clean, 1.0)?,
                Metric::Mi => mutual_information(pred, clean, MI_BINS)?,
                Metric::Smi => spectral_mutual_information(pred, clean, MI_BINS)?,
                Metric::Rmse => rmse(pred, clean)?,
            };
            Ok((m, v))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricRow { values })
}

/// Per-image metrics averaged over all pairs.
pub fn evaluate(preds: &[Image], cleans: &[Image]) -> Result<MetricRow> {
    if preds.is_empty() || preds.len() != cleans.len() {
        return Err(Error::InvalidArgument(format!(
            "need matching non-empty image lists, got {} and {}",
            preds.len(),
            cleans.len()
        )));
    }
    let rows = preds
        .iter()
        .zip(cleans)
        .map(|(p, c)| evaluate_pair(p, c))
        .collect::<Result<Vec<_>>>()?;
    let first = &rows[0];
    if rows.iter().any(|r| r.metrics() != first.metrics()) {
        return Err(Error::InvalidArgument("cannot average 2D and 3D metric rows".into()));
    }
    let values = first
        .metrics()
        .into_iter()
        .map(|m| {
            let mean = rows.iter().map(|r| r.get(m).unwrap()).sum::<f64>() / rows.len() as f64;
            (m, mean)
        })
        .collect();
    Ok(MetricRow { values })
}
