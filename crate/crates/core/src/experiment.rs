//! Per-image experiment runner: simulate or load observations, run each
//! method, and collect one averaged metric row per method.
//!
//! The JSON report is the single source of truth; CSV and text tables are
//! rendered from it.

use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::baselines::lucy_richardson;
use crate::config::{layered, merge};
use crate::degradation::{degrade, DegradeConfig};
use crate::error::{Error, Result};
use crate::inference::{predict, TileConfig};
use crate::io::{read_image, write_image};
use crate::losses::{LossConfig, LossPreset};
use crate::metrics::{evaluate, Metric, MetricRow};
use crate::phantom::PhantomSpec;
use crate::psf::{gaussian_psf, load_psf, PsfKernel};
use crate::tensor::{Image, SeededRng};
use crate::trainer::{train, LogRow, TrainConfig, TrainPaths};

/// Overrides the default output root when the config names none.
pub const OUTPUT_DIR_ENV: &str = "SSDECONV_OUTPUT_DIR";
pub const DEFAULT_OUTPUT_DIR: &str = "runs";

/// Stage labels for [`stage_seed`]. The single-stage commands use the same
/// labels, so running stages one by one reproduces a full run.
pub const PHANTOM_STAGE: &str = "experiment/phantom";
pub const DEGRADE_STAGE: &str = "experiment/degrade";
pub const TRAIN_STAGE: &str = "experiment/train";
pub const INIT_STAGE: &str = "experiment/init";

/// Seed for one pipeline stage, derived from the top-level seed.
pub fn stage_seed(seed: u64, label: &str, index: u64) -> u64 {
    SeededRng::derive(seed, label, &[index]).seed()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Method {
    /// The observation itself.
    Input,
    /// Lucy–Richardson with a fixed iteration count.
    Lr(usize),
    /// Self-supervised training with the configured loss, or with a preset.
    Ours(Option<LossPreset>),
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Input => f.write_str("input"),
            Method::Lr(n) => write!(f, "lr:{n}"),
            Method::Ours(None) => f.write_str("ours"),
            Method::Ours(Some(p)) => write!(f, "ours:{}", p.name()),
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("unknown method `{s}`; expected input, lr:<n>, ours or ours:<preset>"));
        match s.split_once(':') {
            None if s == "input" => Ok(Method::Input),
            None if s == "ours" => Ok(Method::Ours(None)),
            Some(("lr", n)) => match n.parse::<usize>() {
                Ok(n) if n >= 1 => Ok(Method::Lr(n)),
                _ => Err(bad()),
            },
            Some(("ours", p)) => p.parse().map(|p| Method::Ours(Some(p))).map_err(|_| bad()),
            _ => Err(bad()),
        }
    }
}

impl Serialize for Method {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Method {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Clean references: a generated phantom or image files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phantom: Option<PhantomSpec>,
    /// Number of phantoms drawn, one seed each.
    #[serde(default = "one")]
    pub count: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub clean: Vec<PathBuf>,
    /// Pre-degraded observations matching `clean`; skips simulation.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub observed: Vec<PathBuf>,
}

fn one() -> usize {
    1
}

/// A kernel file, or a Gaussian stand-in of the given side and width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PsfConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    pub side: usize,
    pub sigma: f64,
}

impl Default for PsfConfig {
    fn default() -> Self {
        Self {
            path: None,
            side: 17,
            sigma: 2.0,
        }
    }
}

impl PsfConfig {
    pub fn build(&self, dims: usize) -> Result<PsfKernel> {
        match &self.path {
            Some(p) => load_psf(p),
            None => gaussian_psf(dims, self.side, self.sigma),
        }
    }
}

/// Experiment file as written by the user. Stage sections are kept as raw
/// tables and resolved against the defaults for the data dimensionality.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentFile {
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    pub methods: Vec<Method>,
    pub data: DataConfig,
    #[serde(default)]
    pub psf: PsfConfig,
    #[serde(default = "empty_table")]
    pub degrade: toml::Value,
    #[serde(default = "empty_table")]
    pub train: toml::Value,
    #[serde(default = "empty_table")]
    pub predict: toml::Value,
    /// Write restored images and checkpoints next to the report.
    #[serde(default = "yes")]
    pub save_outputs: bool,
}

fn default_name() -> String {
    "experiment".into()
}

fn empty_table() -> toml::Value {
    toml::Value::Table(Default::default())
}

fn yes() -> bool {
    true
}

/// Fully resolved experiment.
#[derive(Debug, Clone, Serialize)]
pub struct Experiment {
    pub name: String,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub methods: Vec<Method>,
    pub data: DataConfig,
    pub psf: PsfConfig,
    pub dims: usize,
    pub degrade: DegradeConfig,
    pub train: TrainConfig,
    pub predict: TileConfig,
    pub save_outputs: bool,
    /// Whether stage seeds came from the file rather than the top seed.
    #[serde(skip)]
    explicit_seeds: (bool, bool),
}

impl Experiment {
    /// Resolves a parsed file (with command-line overrides already merged).
    pub fn from_toml(mut value: toml::Value, overrides: Option<toml::Value>) -> Result<Self> {
        if let Some(o) = overrides {
            merge(&mut value, o);
        }
        let file: ExperimentFile = value
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        Self::resolve(file)
    }

    pub fn load(path: &Path, overrides: Option<toml::Value>) -> Result<Self> {
        Self::from_toml(crate::config::read_toml(path)?, overrides)
    }

    fn resolve(file: ExperimentFile) -> Result<Self> {
        let data = &file.data;
        let dims = match (&data.phantom, data.clean.is_empty()) {
            (Some(p), true) => p.shape().len(),
            (None, false) => read_image(&data.clean[0])?.ndim(),
            _ => return Err(Error::Config("data needs exactly one of `phantom` or `clean`".into())),
        };
        if data.count < 1 {
            return Err(Error::Config("data.count must be at least 1".into()));
        }
        if !data.observed.is_empty() && data.observed.len() != data.clean.len() {
            return Err(Error::Config("data.observed must match data.clean one to one".into()));
        }
        if file.methods.is_empty() {
            warn!("experiment `{}` lists no methods", file.name);
        }

        let has_seed = |t: &toml::Value| t.get("seed").is_some();
        let explicit_seeds = (has_seed(&file.degrade), has_seed(&file.train));

        let degrade_default = if dims == 3 { DegradeConfig::paper_3d(0) } else { DegradeConfig::paper_2d(0) };
        let degrade: DegradeConfig = layered(&degrade_default, file.degrade.clone())?;
        degrade.validate(dims).map_err(|e| Error::Config(e.to_string()))?;

        let mut train_over = file.train.clone();
        merge(&mut train_over, crate::config::table_from_pairs([("dims", toml::Value::Integer(dims as i64))]));
        if train_over.get("network").and_then(|n| n.get("dims")).is_none() {
            merge(
                &mut train_over,
                crate::config::table_from_pairs([("network.dims", toml::Value::Integer(dims as i64))]),
            );
        }
        let train = TrainConfig::from_overrides(train_over)?;

        let predict: TileConfig = layered(&TileConfig::default_for(dims), file.predict.clone())?;
        predict.validate(train.network.divisor()).map_err(|e| Error::Config(e.to_string()))?;

        let output_dir = file
            .output_dir
            .clone()
            .or_else(|| std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR))
            .join(&file.name);

        Ok(Self {
            name: file.name,
            seed: file.seed,
            output_dir,
            methods: file.methods,
            data: file.data,
            psf: file.psf,
            dims,
            degrade,
            train,
            predict,
            save_outputs: file.save_outputs,
            explicit_seeds,
        })
    }

    fn degrade_for(&self, index: usize) -> DegradeConfig {
        let mut cfg = self.degrade.clone();
        if !self.explicit_seeds.0 {
            cfg.seed = stage_seed(self.seed, DEGRADE_STAGE, index as u64);
        }
        cfg
    }

    fn train_for(&self, index: usize, method: &Method) -> TrainConfig {
        let mut cfg = self.train.clone();
        if !self.explicit_seeds.1 {
            cfg.seed = stage_seed(self.seed, TRAIN_STAGE, index as u64);
            cfg.network.init_seed = stage_seed(self.seed, INIT_STAGE, index as u64);
        }
        if let Method::Ours(Some(p)) = method {
            let preset = p.config();
            cfg.loss = LossConfig {
                bound_min: cfg.loss.bound_min,
                bound_max: cfg.loss.bound_max,
                ..preset
            };
        }
        cfg
    }

    /// Clean references and matching observations.
    pub fn load_data(&self, psf: &PsfKernel) -> Result<Vec<(Image, Image)>> {
        let cleans: Vec<Image> = match &self.data.phantom {
            Some(spec) => (0..self.data.count)
                .map(|i| spec.generate(stage_seed(self.seed, PHANTOM_STAGE, i as u64)))
                .collect::<Result<_>>()?,
            None => self.data.clean.iter().map(read_image).collect::<Result<_>>()?,
        };
        if self.data.observed.is_empty() {
            cleans
                .into_iter()
                .enumerate()
                .map(|(i, c)| {
                    let y = degrade(&c, psf, &self.degrade_for(i))?;
                    Ok((c, y))
                })
                .collect()
        } else {
            cleans
                .into_iter()
                .zip(&self.data.observed)
                .map(|(c, p)| Ok((c, read_image(p)?)))
                .collect()
        }
    }
}

/// One method's averaged result. `metrics` is `None` when the method failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodRow {
    pub method: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loss: Option<LossConfig>,
    pub metrics: Option<MetricRow>,
    /// Mean training time per image.
    pub train_seconds: Option<f64>,
    /// Mean time to restore one image.
    pub inference_ms: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub name: String,
    pub seed: u64,
    pub dims: usize,
    pub images: usize,
    pub metrics: Vec<Metric>,
    pub rows: Vec<MethodRow>,
}

impl ExperimentReport {
    pub fn succeeded(&self) -> bool {
        self.rows.iter().all(|r| r.metrics.is_some())
    }

    pub fn row(&self, method: &str) -> Option<&MethodRow> {
        self.rows.iter().find(|r| r.method == method)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,lambda_bsp,lambda_rec,lambda_inv,lambda_inv_d,lambda_bound,lambda_bound_d");
        for m in &self.metrics {
            write!(out, ",{}", m.name().to_lowercase()).unwrap();
        }
        out.push_str(",train_s,inference_ms,error\n");
        let opt = |v: Option<f64>| v.map(|v| format!("{v}")).unwrap_or_default();
        for r in &self.rows {
            out.push_str(&r.method);
            for i in 0..6 {
                write!(out, ",{}", opt(r.loss.map(|l| l.lambdas()[i]))).unwrap();
            }
            for m in &self.metrics {
                write!(out, ",{}", opt(r.metrics.as_ref().and_then(|row| row.get(*m)))).unwrap();
            }
            let err = r.error.as_deref().unwrap_or("").replace(['"', '\n'], " ");
            writeln!(out, ",{},{},\"{}\"", opt(r.train_seconds), opt(r.inference_ms), err).unwrap();
        }
        out
    }
}

/// Index of the best row per metric column; `None` when no row has a value.
pub fn best_rows(report: &ExperimentReport) -> Vec<Option<usize>> {
    report
        .metrics
        .iter()
        .map(|&m| {
            let mut best: Option<(usize, f64)> = None;
            for (i, r) in report.rows.iter().enumerate() {
                let Some(v) = r.metrics.as_ref().and_then(|row| row.get(m)) else { continue };
                let better = match best {
                    None => true,
                    Some((_, b)) => if m.higher_is_better() { v > b } else { v < b },
                };
                if better {
                    best = Some((i, v));
                }
            }
            best.map(|(i, _)| i)
        })
        .collect()
}

/// Aligned plain-text table. Headers carry ↑ or ↓; best values get a `*`.
pub fn report_render(report: &ExperimentReport) -> String {
    let best = best_rows(report);
    let mut header = vec!["method".to_string()];
    header.extend(
        report
            .metrics
            .iter()
            .map(|m| format!("{} {}", m.name(), if m.higher_is_better() { '↑' } else { '↓' })),
    );
    header.push("train s".into());
    header.push("infer ms".into());

    let mut rows: Vec<Vec<String>> = Vec::new();
    for (i, r) in report.rows.iter().enumerate() {
        let mut cells = vec![r.method.clone()];
        for (j, m) in report.metrics.iter().enumerate() {
            let cell = match r.metrics.as_ref().and_then(|row| row.get(*m)) {
                Some(v) => {
                    let digits = if matches!(m, Metric::Psnr) { 2 } else { 4 };
                    let mark = if best[j] == Some(i) { "*" } else { "" };
                    format!("{v:.digits$}{mark}")
                }
                None => "-".into(),
            };
            cells.push(cell);
        }
        cells.push(r.train_seconds.map(|v| format!("{v:.1}")).unwrap_or_else(|| "-".into()));
        cells.push(r.inference_ms.map(|v| format!("{v:.1}")).unwrap_or_else(|| "-".into()));
        rows.push(cells);
    }

    let width = |j: usize| {
        rows.iter()
            .map(|r| r[j].chars().count())
            .chain([header[j].chars().count()])
            .max()
            .unwrap_or(0)
    };
    let widths: Vec<usize> = (0..header.len()).map(width).collect();
    let line = |cells: &[String]| {
        let mut s = String::new();
        for (j, c) in cells.iter().enumerate() {
            let pad = widths[j] - c.chars().count();
            if j == 0 {
                write!(s, "{c}{}", " ".repeat(pad)).unwrap();
            } else {
                write!(s, "  {}{c}", " ".repeat(pad)).unwrap();
            }
        }
        s.trim_end().to_string() + "\n"
    };
    let mut out = line(&header);
    out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
    out.push('\n');
    for r in &rows {
        out.push_str(&line(r));
    }
    for r in report.rows.iter().filter(|r| r.error.is_some()) {
        writeln!(out, "{} failed: {}", r.method, r.error.as_deref().unwrap_or_default()).unwrap();
    }
    out
}

struct MethodOutput {
    images: Vec<Image>,
    loss: Option<LossConfig>,
    train_seconds: Option<f64>,
    inference_ms: f64,
}

/// Runs every method on every image and writes `report.{json,csv,txt}`
/// under the output directory. Method failures are recorded in their row;
/// other failures abort the run.
pub fn run_experiment(exp: &Experiment) -> Result<ExperimentReport> {
    let psf = exp.psf.build(exp.dims)?;
    let pairs = exp.load_data(&psf)?;
    let out_dir = &exp.output_dir;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let resolved = serde_json::to_string_pretty(exp)?;
    fs::write(out_dir.join("config.json"), resolved).map_err(|e| Error::io(out_dir, e))?;

    let cleans: Vec<Image> = pairs.iter().map(|(c, _)| c.clone()).collect();
    let mut rows = Vec::with_capacity(exp.methods.len());
    for method in &exp.methods {
        info!("{}: running {method}", exp.name);
        let outcome = run_method(exp, method, &pairs, &psf)
            .and_then(|out| evaluate(&out.images, &cleans).map(|m| (out, m)));
        let row = match outcome {
            Ok((out, metrics)) => {
                if exp.save_outputs {
                    for (i, img) in out.images.iter().enumerate() {
                        let path = out_dir.join("images").join(format!("{}_{i}.tif", file_stem(method)));
                        write_image(&path, img)?;
                    }
                }
                let n = pairs.len() as f64;
                MethodRow {
                    method: method.to_string(),
                    loss: out.loss,
                    metrics: Some(metrics),
                    train_seconds: out.train_seconds,
                    inference_ms: Some(out.inference_ms / n),
                    error: None,
                }
            }
            Err(e) => {
                warn!("{method} failed: {e}");
                MethodRow {
                    method: method.to_string(),
                    loss: None,
                    metrics: None,
                    train_seconds: None,
                    inference_ms: None,
                    error: Some(e.to_string()),
                }
            }
        };
        rows.push(row);
    }

    let report = ExperimentReport {
        name: exp.name.clone(),
        seed: exp.seed,
        dims: exp.dims,
        images: pairs.len(),
        metrics: Metric::for_dims(exp.dims).to_vec(),
        rows,
    };
    let write = |file: &str, text: String| {
        let p = out_dir.join(file);
        fs::write(&p, text).map_err(|e| Error::io(p, e))
    };
    write("report.json", report.to_json()?)?;
    write("report.csv", report.to_csv())?;
    write("report.txt", report_render(&report))?;
    Ok(report)
}

fn file_stem(method: &Method) -> String {
    method.to_string().replace([':', '(', ')'], "_")
}

fn run_method(exp: &Experiment, method: &Method, pairs: &[(Image, Image)], psf: &PsfKernel) -> Result<MethodOutput> {
    let mut images = Vec::with_capacity(pairs.len());
    let mut inference_ms = 0.0;
    let mut train_seconds = 0.0;
    let mut loss = None;
    for (i, (_, y)) in pairs.iter().enumerate() {
        match method {
            Method::Input => images.push(y.clone()),
            Method::Lr(n) => {
                let t = Instant::now();
                let x = lucy_richardson(y, psf, *n)?;
                inference_ms += t.elapsed().as_secs_f64() * 1e3;
                images.push(x.clip(0.0, 1.0));
            }
            Method::Ours(_) => {
                let cfg = exp.train_for(i, method);
                loss = Some(cfg.loss);
                let outcome = train(y, psf, &cfg, None)?;
                train_seconds += outcome.seconds;
                let ck = outcome.checkpoint;
                let pred = predict(&ck.model, y, &ck.stats, &exp.predict)?;
                inference_ms += pred.elapsed_ms;
                if exp.save_outputs {
                    let dir = exp.output_dir.join("models").join(format!("{}_{i}", file_stem(method)));
                    let paths = TrainPaths::in_dir(&dir);
                    ck.save(&paths.checkpoint)?;
                    write_log(&paths.log, &outcome.log)?;
                }
                images.push(pred.image);
            }
        }
    }
    let n = pairs.len() as f64;
    Ok(MethodOutput {
        images,
        loss,
        train_seconds: matches!(method, Method::Ours(_)).then_some(train_seconds / n),
        inference_ms,
    })
}

fn write_log(path: &Path, rows: &[LogRow]) -> Result<()> {
    let mut text = LogRow::csv_header() + "\n";
    for r in rows {
        text.push_str(&r.csv_row());
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
