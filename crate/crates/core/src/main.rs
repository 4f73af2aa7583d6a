use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{error, info};
use serde_json::json;

use ssdeconv::baselines::{lr_sweep, lucy_richardson};
use ssdeconv::config::{layered, read_toml, table_from_pairs};
use ssdeconv::degradation::{degrade, DegradeConfig};
use ssdeconv::error::{Error, Result};
use ssdeconv::experiment::{
    report_render, run_experiment, stage_seed, Experiment, DEGRADE_STAGE, INIT_STAGE, PHANTOM_STAGE, TRAIN_STAGE,
};
use ssdeconv::fftconv::{benchmark_conv, BenchResult};
use ssdeconv::inference::{predict, TileConfig};
use ssdeconv::io::{read_image, write_image};
use ssdeconv::metrics::evaluate_pair;
use ssdeconv::model::Checkpoint;
use ssdeconv::phantom::PhantomSpec;
use ssdeconv::psf::{gaussian_psf, load_psf, PsfKernel};
use ssdeconv::trainer::{train, TrainConfig, TrainPaths};

/// Self-supervised single-image deconvolution.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    /// Top-level seed (default 0); every stage derives its own stream from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic ground-truth image.
    Phantom {
        #[arg(long, default_value = "texture")]
        kind: String,
        /// Comma-separated shape, e.g. 256,256 or 64,96,96.
        #[arg(long, value_delimiter = ',', default_value = "256,256")]
        shape: Vec<usize>,
        #[arg(long, default_value_t = 40)]
        fibers: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Blur, add noise and quantize an image. Writes a JSON sidecar.
    Degrade {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        psf: PsfArgs,
        /// TOML file with degradation keys.
        #[arg(long)]
        config: Option<PathBuf>,
        /// `key=value` override, repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        sets: Vec<String>,
    },
    /// Train a network on one observation.
    Train {
        #[arg(long)]
        input: PathBuf,
        /// Directory for the checkpoint and the training log. An existing
        /// checkpoint there is resumed.
        #[arg(long)]
        out_dir: PathBuf,
        #[command(flatten)]
        psf: PsfArgs,
        /// TOML file with training keys.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Loss preset replacing the configured weights.
        #[arg(long)]
        preset: Option<String>,
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        sets: Vec<String>,
    },
    /// Restore an image with a trained checkpoint. Writes a JSON sidecar.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Force tiling on or off; the default depends on dimensionality.
        #[arg(long)]
        tiles: Option<bool>,
        #[arg(long)]
        tile_size: Option<usize>,
        #[arg(long)]
        overlap: Option<usize>,
    },
    /// Lucy–Richardson deconvolution. With `--clean`, prints metrics for
    /// every iteration count.
    Lr {
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        psf: PsfArgs,
        #[arg(long, value_delimiter = ',', default_value = "5")]
        iterations: Vec<usize>,
        /// Output for the largest iteration count.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        clean: Option<PathBuf>,
    },
    /// Compare a restored image with its clean reference.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        clean: PathBuf,
    },
    /// Time direct against FFT convolution.
    BenchConv {
        #[arg(long, value_delimiter = ',', default_value = "64,64,64")]
        shape: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "9,17,31")]
        kernels: Vec<usize>,
        #[arg(long, default_value_t = 3)]
        repeats: usize,
    },
    /// Full pipeline from an experiment file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output root, overriding the file and the environment.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        sets: Vec<String>,
    },
}

#[derive(Args)]
struct PsfArgs {
    /// Kernel file; a Gaussian stand-in is used when absent.
    #[arg(long)]
    psf: Option<PathBuf>,
    #[arg(long, default_value_t = 17)]
    psf_side: usize,
    #[arg(long, default_value_t = 2.0)]
    psf_sigma: f64,
}

impl PsfArgs {
    fn build(&self, dims: usize) -> Result<PsfKernel> {
        match &self.psf {
            Some(p) => load_psf(p),
            None => gaussian_psf(dims, self.psf_side, self.psf_sigma),
        }
    }
}

/// Parses `key=value`; the value is read as a TOML literal, else a string.
fn parse_sets(sets: &[String]) -> Result<toml::Value> {
    let mut pairs = Vec::with_capacity(sets.len());
    for s in sets {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected KEY=VALUE, got `{s}`")))?;
        let value = format!("v = {v}")
            .parse::<toml::Table>()
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(v.to_string()));
        pairs.push((k.trim(), value));
    }
    Ok(table_from_pairs(pairs))
}

/// Default < file < explicit flags.
fn layer_file_and_flags(file: Option<&Path>, flags: toml::Value) -> Result<toml::Value> {
    let mut base = match file {
        Some(p) => read_toml(p)?,
        None => toml::Value::Table(Default::default()),
    };
    ssdeconv::config::merge(&mut base, flags);
    Ok(base)
}

fn sidecar(path: &Path, value: serde_json::Value) -> Result<()> {
    let p = path.with_extension("json");
    fs::write(&p, serde_json::to_string_pretty(&value)?).map_err(|e| Error::Format {
        path: p.clone(),
        message: e.to_string(),
    })
}

fn run(cli: Cli) -> Result<bool> {
    let seed = cli.seed.unwrap_or(0);
    match cli.command {
        Command::Phantom { kind, shape, fibers, out } => {
            let spec = match kind.as_str() {
                "texture" => PhantomSpec::Texture { shape },
                "microtubules" => PhantomSpec::Microtubules { shape, n_fibers: fibers },
                other => return Err(Error::Config(format!("unknown phantom kind `{other}`"))),
            };
            let img = spec.generate(stage_seed(seed, PHANTOM_STAGE, 0))?;
            write_image(&out, &img)?;
            info!("wrote {}", out.display());
        }
        Command::Degrade { input, out, psf, config, sets } => {
            let clean = read_image(&input)?;
            let dims = clean.ndim();
            let defaults = if dims == 3 { DegradeConfig::paper_3d(0) } else { DegradeConfig::paper_2d(0) };
            let over = layer_file_and_flags(config.as_deref(), parse_sets(&sets)?)?;
            let explicit_seed = over.get("seed").is_some();
            let mut cfg: DegradeConfig = layered(&defaults, over)?;
            if !explicit_seed {
                cfg.seed = stage_seed(seed, DEGRADE_STAGE, 0);
            }
            cfg.validate(dims).map_err(|e| Error::Config(e.to_string()))?;
            let kernel = psf.build(dims)?;
            let y = degrade(&clean, &kernel, &cfg)?;
            write_image(&out, &y)?;
            sidecar(
                &out,
                json!({ "input": input, "degrade": cfg, "psf_shape": kernel.shape(), "shape": y.shape() }),
            )?;
        }
        Command::Train { input, out_dir, psf, config, preset, steps, sets } => {
            let img = read_image(&input)?;
            let dims = img.ndim();
            let mut flags = parse_sets(&sets)?;
            let mut extra = vec![("dims", toml::Value::Integer(dims as i64))];
            if let Some(n) = steps {
                extra.push(("total_steps", toml::Value::Integer(n as i64)));
            }
            ssdeconv::config::merge(&mut flags, table_from_pairs(extra));
            let mut over = layer_file_and_flags(config.as_deref(), flags)?;
            if over.get("network").and_then(|n| n.get("dims")).is_none() {
                ssdeconv::config::merge(
                    &mut over,
                    table_from_pairs([("network.dims", toml::Value::Integer(dims as i64))]),
                );
            }
            let explicit_seed = over.get("seed").is_some();
            let mut cfg = TrainConfig::from_overrides(over)?;
            if !explicit_seed {
                cfg.seed = stage_seed(seed, TRAIN_STAGE, 0);
                cfg.network.init_seed = stage_seed(seed, INIT_STAGE, 0);
            }
            if let Some(p) = preset {
                let bounds = (cfg.loss.bound_min, cfg.loss.bound_max);
                cfg.loss = ssdeconv::losses::LossConfig::preset(&p)?;
                (cfg.loss.bound_min, cfg.loss.bound_max) = bounds;
            }
            let kernel = psf.build(dims)?;
            let paths = TrainPaths::in_dir(&out_dir);
            let outcome = train(&img, &kernel, &cfg, Some(&paths))?;
            println!(
                "trained {} steps in {:.1}s; checkpoint {}",
                outcome.checkpoint.step,
                outcome.seconds,
                paths.checkpoint.display()
            );
        }
        Command::Predict { checkpoint, input, out, tiles, tile_size, overlap } => {
            let ck = Checkpoint::load(&checkpoint)?;
            let img = read_image(&input)?;
            let mut tc = TileConfig::default_for(img.ndim());
            tc.enabled = tiles.unwrap_or(tc.enabled);
            tc.tile_size = tile_size.unwrap_or(tc.tile_size);
            tc.overlap = overlap.unwrap_or(tc.overlap);
            let pred = predict(&ck.model, &img, &ck.stats, &tc)?;
            write_image(&out, &pred.image)?;
            sidecar(
                &out,
                json!({
                    "checkpoint": checkpoint,
                    "input": input,
                    "elapsed_ms": pred.elapsed_ms,
                    "tiles": pred.tiles,
                    "tile_config": tc,
                    "value_range": pred.image.value_range(),
                }),
            )?;
            println!("restored in {:.1} ms over {} tile(s)", pred.elapsed_ms, pred.tiles);
        }
        Command::Lr { input, psf, iterations, out, clean } => {
            let y = read_image(&input)?;
            let kernel = psf.build(y.ndim())?;
            if let Some(c) = clean {
                let rows = lr_sweep(&y, &kernel, &iterations, &read_image(&c)?)?;
                for r in rows {
                    let cells: Vec<String> = r.metrics.values.iter().map(|(m, v)| format!("{m}={v:.4}")).collect();
                    println!("n={:<4} {}  ({:.1} ms)", r.iterations, cells.join(" "), r.elapsed_ms);
                }
            }
            if let Some(out) = out {
                let n = iterations.iter().copied().max().unwrap_or(5);
                write_image(&out, &lucy_richardson(&y, &kernel, n)?)?;
            }
        }
        Command::Evaluate { pred, clean } => {
            let row = evaluate_pair(&read_image(&pred)?, &read_image(&clean)?)?;
            let map: serde_json::Map<String, serde_json::Value> =
                row.values.iter().map(|(m, v)| (m.name().to_string(), json!(v))).collect();
            println!("{}", serde_json::to_string_pretty(&map)?);
        }
        Command::BenchConv { shape, kernels, repeats } => {
            println!("{}", BenchResult::CSV_HEADER);
            for k in kernels {
                println!("{}", benchmark_conv(&shape, k, repeats)?.csv_row());
            }
        }
        Command::Run { config, out, sets } => {
            let mut over = parse_sets(&sets)?;
            if let Some(dir) = out {
                let dir = dir.to_string_lossy().into_owned();
                ssdeconv::config::merge(&mut over, table_from_pairs([("output_dir", toml::Value::String(dir))]));
            }
            if let Some(s) = cli.seed {
                ssdeconv::config::merge(&mut over, table_from_pairs([("seed", toml::Value::Integer(s as i64))]));
            }
            let exp = Experiment::load(&config, Some(over))?;
            let report = run_experiment(&exp)?;
            print!("{}", report_render(&report));
            println!("report written to {}", exp.output_dir.display());
            return Ok(report.succeeded());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e @ Error::Config(_)) => {
            error!("{e}");
            ExitCode::from(2)
        }
        Err(e) => {
            error!("{e}");
            ExitCode::from(1)
        }
    }
}
