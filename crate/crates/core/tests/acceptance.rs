//! End-to-end acceptance checks. Each test writes one `PASS`/`FAIL` line with
//! its measured values straight to stdout, so the lines survive output
//! capture, and then asserts. Tests hold one lock while running: timings
//! must not share the CPU with training.

use std::io::Write;
use std::sync::{Mutex, MutexGuard, OnceLock};

use ndarray::{ArrayD, IxDyn};
use rand::Rng;

use ssdeconv::baselines::lr_sweep;
use ssdeconv::degradation::{
    add_gaussian, add_poisson, add_salt_pepper, blur, degrade, quantize, DegradeConfig,
};
use ssdeconv::experiment::{run_experiment, Experiment};
use ssdeconv::fftconv::{benchmark_conv, convolve, convolve_call_count, ConvBackend, Padding};
use ssdeconv::inference::{predict, TileConfig};
use ssdeconv::losses::{blind_spot_loss, boundary_loss, composite_loss, composite_loss_with_grad, LossConfig, LossInputs};
use ssdeconv::metrics::{mutual_information, psnr, rmse, spectral_mutual_information, ssim, Metric};
use ssdeconv::model::{Checkpoint, NormKind};
use ssdeconv::phantom::PhantomSpec;
use ssdeconv::psf::{gaussian_psf, PsfKernel};
use ssdeconv::tensor::{Image, NormStats, SeededRng};
use ssdeconv::trainer::{train, TrainConfig};

fn report(name: &str, pass: bool, detail: &str) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    let _ = out.flush();
}

fn exclusive() -> MutexGuard<'static, ()> {
    static LOCK: Mutex<()> = Mutex::new(());
    LOCK.lock().unwrap_or_else(|e| e.into_inner())
}

fn uniform_image(shape: &[usize], rng: &mut SeededRng) -> Image {
    Image::new(ArrayD::from_shape_fn(IxDyn(shape), |_| rng.gen::<f32>())).unwrap()
}

fn sup_norm(a: &ArrayD<f32>, b: &ArrayD<f32>) -> f32 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f32::max)
}

#[test]
fn direct_and_fft_backends_agree() {
    let _guard = exclusive();
    let mut rng = SeededRng::new(101);
    let mut worst = 0f32;
    let mut cases = 0;
    for case in 0..56 {
        let dims = if case % 4 == 3 { 3 } else { 2 };
        let (max_img, max_side) = if dims == 2 { (128, 31) } else { (48, 17) };
        let side = 2 * rng.gen_range(0..=max_side / 2) + 1;
        let shape: Vec<usize> = (0..dims).map(|_| rng.gen_range(side.max(8)..=max_img)).collect();
        let ksh = vec![side; dims];
        let raw = ArrayD::from_shape_fn(IxDyn(&ksh), |_| rng.gen::<f32>() + 1e-3);
        let kernel = PsfKernel::normalize(raw).unwrap().0;
        let x = uniform_image(&shape, &mut rng);
        let padding = if case % 2 == 0 { Padding::Reflect } else { Padding::Zero };
        let d = convolve(x.data(), &kernel, ConvBackend::Direct, padding).unwrap();
        let f = convolve(x.data(), &kernel, ConvBackend::Fft, padding).unwrap();
        worst = worst.max(sup_norm(&d, &f));
        cases += 1;
    }
    let pass = cases >= 50 && worst <= 1e-4;
    report("backend equivalence", pass, &format!("{cases} cases, worst sup-norm {worst:.3e} (limit 1e-4)"));
    assert!(pass);
}

#[test]
fn fft_backend_is_faster_for_large_volume_kernels() {
    let _guard = exclusive();
    let r17 = benchmark_conv(&[64, 64, 64], 17, 3).unwrap();
    let r31 = benchmark_conv(&[64, 64, 64], 31, 3).unwrap();
    let pass = r17.speedup > 1.5 && r31.speedup > r17.speedup;
    report(
        "fft speedup",
        pass,
        &format!(
            "64^3: side 17 direct {:.0} ms fft {:.0} ms ({:.1}x); side 31 direct {:.0} ms fft {:.0} ms ({:.1}x)",
            r17.direct_ms, r17.fft_ms, r17.speedup, r31.direct_ms, r31.fft_ms, r31.speedup
        ),
    );
    assert!(pass);
}

struct Toy {
    x: Vec<f32>,
    fu: Vec<f32>,
    fm: Vec<f32>,
    gu: Vec<f32>,
    gm: Vec<f32>,
    mask: Vec<usize>,
    stats: NormStats,
}

impl Toy {
    /// 8x8 tensors whose destandardized values stay at least 0.05 away from
    /// the range bounds 0 and 1, so the boundary terms are differentiable.
    fn new(seed: u64) -> Self {
        let mut rng = SeededRng::new(seed);
        let stats = NormStats::new(0.4, 0.25).unwrap();
        let mut away = |rng: &mut SeededRng| loop {
            let u: f64 = rng.gen_range(-0.4..1.4);
            if (u - 0.0).abs() > 0.05 && (u - 1.0).abs() > 0.05 {
                return ((u - stats.mean) / stats.std) as f32;
            }
        };
        let v = |rng: &mut SeededRng, f: &mut dyn FnMut(&mut SeededRng) -> f32| (0..64).map(|_| f(rng)).collect::<Vec<f32>>();
        Self {
            x: v(&mut rng, &mut away),
            fu: v(&mut rng, &mut away),
            fm: v(&mut rng, &mut away),
            gu: v(&mut rng, &mut away),
            gm: v(&mut rng, &mut away),
            mask: vec![3, 9, 17, 30, 41, 52, 63],
            stats,
        }
    }

    fn inputs(&self) -> LossInputs<'_> {
        LossInputs {
            x: &self.x,
            f_unmasked: Some(&self.fu),
            f_masked: Some(&self.fm),
            g_unmasked: Some(&self.gu),
            g_masked: Some(&self.gm),
            mask: Some(&self.mask),
            stats: self.stats,
        }
    }

    fn slot(&mut self, k: usize) -> &mut Vec<f32> {
        match k {
            0 => &mut self.fu,
            1 => &mut self.fm,
            2 => &mut self.gu,
            _ => &mut self.gm,
        }
    }
}

/// Worst relative mismatch between the analytic gradient and central
/// differences over every supplied tensor.
fn worst_gradient_error(cfg: &LossConfig, seed: u64) -> f64 {
    let mut toy = Toy::new(seed);
    let (_, grads) = composite_loss_with_grad(&toy.inputs(), cfg).unwrap();
    let analytic = [&grads.f_unmasked, &grads.f_masked, &grads.g_unmasked, &grads.g_masked];
    let h = 1e-3f32;
    let mut worst = 0f64;
    for (k, g) in analytic.iter().enumerate() {
        for i in 0..64 {
            let orig = toy.slot(k)[i];
            toy.slot(k)[i] = orig + h;
            let up = composite_loss(&toy.inputs(), cfg).unwrap().total;
            toy.slot(k)[i] = orig - h;
            let down = composite_loss(&toy.inputs(), cfg).unwrap().total;
            toy.slot(k)[i] = orig;
            let fd = (up - down) / (2.0 * h as f64);
            let an = g.as_ref().map_or(0.0, |v| v[i] as f64);
            let err = (fd - an).abs() / (fd.abs().max(an.abs()) + 1e-6);
            if (fd - an).abs() > 1e-7 {
                worst = worst.max(err);
            }
        }
    }
    worst
}

#[test]
fn composite_loss_algebra_and_gradients() {
    let _guard = exclusive();
    let toy = Toy::new(7);
    let n2s = composite_loss(&toy.inputs(), &LossConfig::noise2self()).unwrap();
    let bsp = blind_spot_loss(&toy.gm, &toy.x, &toy.mask).unwrap();
    let blind_spot_ok = (n2s.total - bsp).abs() <= 1e-12;

    let same = Toy {
        fm: toy.fu.clone(),
        gm: toy.gu.clone(),
        ..Toy::new(7)
    };
    let siamese = composite_loss(&same.inputs(), &LossConfig::noise2same()).unwrap();
    let deconv = composite_loss(&same.inputs(), &LossConfig::noise2same_d()).unwrap();
    let invariance_ok = siamese.inv == 0.0 && deconv.inv_d == 0.0;

    let inside: Vec<f32> = (0..64).map(|i| 0.2 + 0.6 * i as f32 / 63.0).collect();
    let bound_value = boundary_loss(&inside, 0.0, 1.0).unwrap();
    let bound_only = LossConfig {
        lambda_rec: 0.0,
        lambda_inv_d: 0.0,
        ..LossConfig::noise2same_d()
    };
    let stats = NormStats::new(0.0, 1.0).unwrap();
    let (_, grads) = composite_loss_with_grad(
        &LossInputs {
            x: &inside,
            f_unmasked: Some(&inside),
            f_masked: None,
            g_unmasked: None,
            g_masked: None,
            mask: None,
            stats,
        },
        &bound_only,
    )
    .unwrap();
    let bound_grad = grads.f_unmasked.unwrap().iter().map(|v| v.abs()).fold(0f32, f32::max);
    let bound_ok = (bound_value - 1.0).abs() <= 1e-12 && bound_grad == 0.0;

    let presets = [
        ("noise2self", LossConfig::noise2self()),
        ("noise2same", LossConfig::noise2same()),
        ("noise2same_d", LossConfig::noise2same_d()),
    ];
    let fd: Vec<(&str, f64)> = presets.iter().map(|(n, c)| (*n, worst_gradient_error(c, 11))).collect();
    let fd_ok = fd.iter().all(|(_, e)| *e <= 1e-2);

    let pass = blind_spot_ok && invariance_ok && bound_ok && fd_ok;
    report(
        "loss algebra",
        pass,
        &format!(
            "blind-spot total {:.6e} vs {:.6e}; invariance on equal passes {} / {}; bound {bound_value:.6} grad {bound_grad:.1e}; fd rel err {}",
            n2s.total,
            bsp,
            siamese.inv,
            deconv.inv_d,
            fd.iter().map(|(n, e)| format!("{n} {e:.2e}")).collect::<Vec<_>>().join(", ")
        ),
    );
    assert!(pass);
}

struct Trained2d {
    clean: Image,
    noisy: Image,
    ckpt: Checkpoint,
    seconds: f64,
}

/// Texture phantom restoration shared by the 2D training and inference checks.
fn trained_2d() -> &'static Trained2d {
    static CELL: OnceLock<Trained2d> = OnceLock::new();
    CELL.get_or_init(|| {
        let clean = PhantomSpec::Texture { shape: vec![256, 256] }.generate(0).unwrap();
        let psf = gaussian_psf(2, 17, 2.0).unwrap();
        let noisy = degrade(&clean, &psf, &DegradeConfig::paper_2d(1)).unwrap();
        let mut cfg = TrainConfig::default_for(2);
        cfg.loss = LossConfig::noise2same_d();
        cfg.total_steps = 300;
        cfg.network = cfg.network.with_base_features(16);
        cfg.network.norm = NormKind::Batch;
        cfg.patch_size = 64;
        cfg.batch_size = 8;
        cfg.lr_decay_every = 100;
        cfg.log_every = 100;
        let out = train(&noisy, &psf, &cfg, None).unwrap();
        Trained2d {
            clean,
            noisy,
            ckpt: out.checkpoint,
            seconds: out.seconds,
        }
    })
}

#[test]
fn training_restores_a_blurred_noisy_texture() {
    let _guard = exclusive();
    let t = trained_2d();
    let pred = predict(&t.ckpt.model, &t.noisy, &t.ckpt.stats, &TileConfig::disabled()).unwrap();
    let (p_in, p_out) = (psnr(&t.noisy, &t.clean, 1.0).unwrap(), psnr(&pred.image, &t.clean, 1.0).unwrap());
    let (r_in, r_out) = (rmse(&t.noisy, &t.clean).unwrap(), rmse(&pred.image, &t.clean).unwrap());
    let pass = p_out - p_in >= 1.0 && r_out < r_in;
    report(
        "2d restoration",
        pass,
        &format!(
            "300 steps in {:.0} s; psnr {p_in:.2} -> {p_out:.2} dB ({:+.2}); rmse {r_in:.4} -> {r_out:.4}",
            t.seconds,
            p_out - p_in
        ),
    );
    assert!(pass);
}

#[test]
fn training_restores_a_fiber_volume() {
    let _guard = exclusive();
    let clean = PhantomSpec::Microtubules {
        shape: vec![64, 96, 96],
        n_fibers: 40,
    }
    .generate(0)
    .unwrap();
    let psf = gaussian_psf(3, 9, 1.5).unwrap();
    let noisy = degrade(&clean, &psf, &DegradeConfig::paper_3d(1)).unwrap();
    let mut cfg = TrainConfig::default_for(3);
    cfg.loss = LossConfig {
        lambda_bound: 0.0,
        ..LossConfig::noise2same()
    };
    cfg.total_steps = 500;
    cfg.network = cfg.network.with_base_features(8);
    cfg.patch_size = 32;
    cfg.batch_size = 2;
    cfg.lr_decay_every = 200;
    cfg.log_every = 100;
    cfg.conv_backend = ConvBackend::Fft;
    let out = train(&noisy, &psf, &cfg, None).unwrap();
    let pred = predict(&out.checkpoint.model, &noisy, &out.checkpoint.stats, &TileConfig::default_for(3)).unwrap();

    let p_in = psnr(&noisy, &clean, 1.0).unwrap();
    let lr = lr_sweep(&noisy, &psf, &[2], &clean).unwrap();
    let p_lr = lr[0].metrics.get(Metric::Psnr).unwrap();
    let p_out = psnr(&pred.image, &clean, 1.0).unwrap();
    let pass = p_out > p_in && p_out > p_lr;
    report(
        "3d restoration",
        pass,
        &format!("500 steps in {:.0} s; psnr input {p_in:.2}, lr(2) {p_lr:.2}, trained {p_out:.2} dB", out.seconds),
    );
    assert!(pass);
}

#[test]
fn lucy_richardson_sweep_behaviour() {
    let _guard = exclusive();
    let clean = PhantomSpec::Texture { shape: vec![256, 256] }.generate(0).unwrap();
    let psf = gaussian_psf(2, 17, 2.0).unwrap();
    let noisy = degrade(&clean, &psf, &DegradeConfig::paper_2d(1)).unwrap();
    let ns = [2, 5, 10, 20];
    let rows = lr_sweep(&noisy, &psf, &ns, &clean).unwrap();
    let p: Vec<f64> = rows.iter().map(|r| r.metrics.get(Metric::Psnr).unwrap()).collect();
    let best = ns[p.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0];
    let noisy_ok = p[1] >= p[3] && (best == 2 || best == 5);

    let blurred = blur(&clean, &psf).unwrap();
    let all: Vec<usize> = (1..=50).collect();
    let clean_rows = lr_sweep(&blurred, &psf, &all, &clean).unwrap();
    let r: Vec<f64> = clean_rows.iter().map(|row| row.metrics.get(Metric::Rmse).unwrap()).collect();
    let first_rise = r.windows(2).position(|w| w[1] >= w[0]);
    let pass = noisy_ok && first_rise.is_none();
    report(
        "lucy-richardson behaviour",
        pass,
        &format!(
            "noisy psnr {} best n={best}; noiseless rmse n=1 {:.5} n=50 {:.5}, first non-decrease {}",
            ns.iter().zip(&p).map(|(n, v)| format!("{n}:{v:.2}")).collect::<Vec<_>>().join(" "),
            r[0],
            r[49],
            first_rise.map_or("none".to_string(), |i| format!("at n={}", i + 2))
        ),
    );
    assert!(pass);
}

fn small_ours_config(dir: &std::path::Path) -> toml::Value {
    format!(
        r#"
        name = "repeat"
        seed = 5
        output_dir = "{}"
        methods = ["input", "ours"]
        save_outputs = false
        [data]
        phantom = {{ kind = "texture", shape = [64, 64] }}
        [psf]
        side = 9
        sigma = 1.5
        [train]
        total_steps = 15
        patch_size = 32
        batch_size = 2
        [train.network]
        base_features = 8
        "#,
        dir.display()
    )
    .parse::<toml::Table>()
    .map(toml::Value::Table)
    .unwrap()
}

#[test]
fn inference_contracts() {
    let _guard = exclusive();
    let t = trained_2d();
    let clean = PhantomSpec::Texture { shape: vec![192, 192] }.generate(9).unwrap();
    let psf = gaussian_psf(2, 17, 2.0).unwrap();
    let noisy = degrade(&clean, &psf, &DegradeConfig::paper_2d(2)).unwrap();

    let before = convolve_call_count();
    let whole = predict(&t.ckpt.model, &noisy, &t.ckpt.stats, &TileConfig::disabled()).unwrap();
    let tiles = TileConfig {
        tile_size: 128,
        overlap: 32,
        enabled: true,
    };
    let tiled = predict(&t.ckpt.model, &noisy, &t.ckpt.stats, &tiles).unwrap();
    let conv_calls = convolve_call_count() - before;

    let m = 32;
    let (a, b) = (whole.raw.data(), tiled.raw.data());
    let mut interior = 0f32;
    for i in m..192 - m {
        for j in m..192 - m {
            interior = interior.max((a[[i, j]] - b[[i, j]]).abs());
        }
    }

    let dir = tempfile::tempdir().unwrap();
    let exp = Experiment::from_toml(small_ours_config(dir.path()), None).unwrap();
    let r1 = run_experiment(&exp).unwrap();
    let r2 = run_experiment(&exp).unwrap();
    let mut drift = 0f64;
    let mut rows_ok = r1.succeeded() && r2.succeeded() && r1.rows.len() == r2.rows.len();
    for (x, y) in r1.rows.iter().zip(&r2.rows) {
        match (&x.metrics, &y.metrics) {
            (Some(mx), Some(my)) => {
                for ((_, u), (_, v)) in mx.values.iter().zip(&my.values) {
                    drift = drift.max((u - v).abs());
                }
            }
            _ => rows_ok = false,
        }
    }

    let tiled_ok = interior <= 1e-3;
    let pass = tiled_ok && conv_calls == 0 && rows_ok && drift <= 1e-4;
    report(
        "inference contracts",
        pass,
        &format!(
            "{} tiles, interior tiled/untiled max diff {interior:.3e} (limit 1e-3); psf convolutions during predict {conv_calls}; rerun metric drift {drift:.1e} (limit 1e-4)",
            tiled.tiles
        ),
    );
    assert!(pass);
}

/// Entropy in nats of `bins` equal-width bins over the values' own range.
fn entropy_oracle(values: &[f32], bins: usize) -> f64 {
    let (lo, hi) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v as f64), h.max(v as f64)));
    let mut counts = vec![0usize; bins];
    for &v in values {
        let k = (((v as f64 - lo) / (hi - lo) * bins as f64).floor() as usize).min(bins - 1);
        counts[k] += 1;
    }
    let n = values.len() as f64;
    counts.iter().filter(|&&c| c > 0).map(|&c| {
        let p = c as f64 / n;
        -p * p.ln()
    }).sum()
}

#[test]
fn metric_identities_and_monotonicity() {
    let _guard = exclusive();
    let mut rng = SeededRng::new(31);
    let x = PhantomSpec::Texture { shape: vec![96, 96] }.generate(3).unwrap();
    let self_ssim = ssim(&x, &x, 1.0).unwrap();
    let self_rmse = rmse(&x, &x).unwrap();
    let u = uniform_image(&[64, 64], &mut rng);
    let mi = mutual_information(&u, &u, 256).unwrap();
    let h = entropy_oracle(u.as_slice(), 256);
    let identities_ok = (self_ssim - 1.0).abs() <= 1e-9 && self_rmse == 0.0 && (mi - h).abs() <= 1e-9;

    let y = add_gaussian(&x, 0.05, &mut rng).unwrap();
    let e = rmse(&y, &x).unwrap();
    let psnr_gap = (psnr(&y, &x, 1.0).unwrap() - 20.0 * (1.0 / e).log10()).abs();

    let sigmas = [0.01, 0.03, 0.1, 0.3];
    let noisy: Vec<Image> = sigmas.iter().map(|&s| add_gaussian(&x, s, &mut rng).unwrap()).collect();
    let ps: Vec<f64> = noisy.iter().map(|n| psnr(n, &x, 1.0).unwrap()).collect();
    let ss: Vec<f64> = noisy.iter().map(|n| ssim(n, &x, 1.0).unwrap()).collect();
    let monotone = ps.windows(2).all(|w| w[1] < w[0]) && ss.windows(2).all(|w| w[1] < w[0]);

    let roll = |img: &Image, dr: usize, dc: usize| {
        Image::new(ArrayD::from_shape_fn(IxDyn(&[96, 96]), |i| img.data()[[(i[0] + dr) % 96, (i[1] + dc) % 96]])).unwrap()
    };
    let base = spectral_mutual_information(&x, &y, 256).unwrap();
    let shifted = spectral_mutual_information(&roll(&x, 7, 40), &roll(&y, 7, 40), 256).unwrap();
    let smi_shift = (base - shifted).abs();

    let pass = identities_ok && psnr_gap <= 1e-9 && monotone && smi_shift <= 1e-6;
    report(
        "metrics",
        pass,
        &format!(
            "ssim(x,x) {self_ssim:.12}, rmse(x,x) {self_rmse}, mi {mi:.9} vs entropy {h:.9}; psnr formula gap {psnr_gap:.1e}; psnr {:?}; ssim {:?}; smi shift change {smi_shift:.1e}",
            ps.iter().map(|v| (v * 100.0).round() / 100.0).collect::<Vec<_>>(),
            ss.iter().map(|v| (v * 1e4).round() / 1e4).collect::<Vec<_>>()
        ),
    );
    assert!(pass);
}

#[test]
fn degradation_noise_statistics() {
    let _guard = exclusive();
    let mut rng = SeededRng::new(77);
    let n = 10_000f64;
    let half = Image::filled(&[100, 100], 0.5).unwrap();
    let alpha = 0.001;
    let pois = add_poisson(&half, alpha, &mut rng).unwrap();
    let mean = pois.mean();
    let var = pois.as_slice().iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let mean_tol = 3.0 * (0.5 * alpha / n).sqrt();
    // Sample variance has relative standard error about sqrt(2 / n); allow 5 of them.
    let var_tol = 5.0 * (2.0 / n).sqrt();
    let poisson_ok = (mean - 0.5).abs() <= mean_tol && (var / (alpha * 0.5) - 1.0).abs() <= var_tol;

    let zeros = Image::zeros(&[100, 100]).unwrap();
    let g = add_gaussian(&zeros, 0.1, &mut rng).unwrap();
    let gm = g.mean();
    let gstd = (g.as_slice().iter().map(|&v| (v as f64 - gm).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let gaussian_ok = (0.097..=0.103).contains(&gstd);

    let flat = Image::filled(&[512, 512], 0.5).unwrap();
    let sp = add_salt_pepper(&flat, 0.01, &mut rng).unwrap();
    let frac = sp.as_slice().iter().filter(|&&v| v != 0.5).count() as f64 / (512.0 * 512.0);
    let full = add_salt_pepper(&flat, 1.0, &mut rng).unwrap();
    let sp_ok = (0.007..=0.013).contains(&frac) && full.as_slice().iter().all(|&v| v == 0.0 || v == 1.0);

    let ramp = uniform_image(&[128, 128], &mut rng);
    let one_bit = quantize(&ramp, 1).unwrap();
    let q10 = quantize(&ramp, 10).unwrap();
    let mut levels: Vec<u32> = q10.as_slice().iter().map(|v| v.to_bits()).collect();
    levels.sort_unstable();
    levels.dedup();
    let mid = quantize(&Image::filled(&[1, 1], 0.5).unwrap(), 10).unwrap().as_slice()[0];
    let idempotent = quantize(&q10, 10).unwrap().as_slice() == q10.as_slice();
    let quant_ok = one_bit.as_slice().iter().all(|&v| v == 0.0 || v == 1.0)
        && (mid as f64 - 512.0 / 1023.0).abs() <= 1e-7
        && idempotent
        && levels.len() <= 1024;

    let tex = PhantomSpec::Texture { shape: vec![128, 128] }.generate(4).unwrap();
    let blurred = blur(&tex, &gaussian_psf(2, 17, 2.0).unwrap()).unwrap();
    let mean_shift = (blurred.mean() / tex.mean() - 1.0).abs();
    let blur_ok = mean_shift <= 1e-4;

    let pass = poisson_ok && gaussian_ok && sp_ok && quant_ok && blur_ok;
    report(
        "degradation statistics",
        pass,
        &format!(
            "poisson mean {mean:.5} (+/-{mean_tol:.1e}) var {var:.3e} vs {:.3e}; gaussian std {gstd:.4}; salt-pepper fraction {frac:.4}; \
             quantize 0.5 -> {mid:.6}, {} levels, idempotent {idempotent}; blur mean shift {mean_shift:.1e}",
            alpha * 0.5,
            levels.len()
        ),
    );
    assert!(pass);
}
