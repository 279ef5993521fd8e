//! The `lfinet` command-line tool.

use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use lfinet_core::checkpoint;
use lfinet_core::config::RunConfig;
use lfinet_core::lms::{laplacian_decompose, laplacian_reconstruct, SIZE_MULTIPLE};
use lfinet_core::metrics::{write_report_json, write_rows_csv};
use lfinet_core::predict::{evaluate_model, predict};
use lfinet_core::raster::{unstack, Raster};
use lfinet_core::seed::{derive_seed, Stream};
use lfinet_core::suites::{self, Scope};
use lfinet_core::train::{MetricsLog, Trainer};
use lfinet_core::trajdata::log::read_csv;
use lfinet_core::trajdata::{load_dataset, load_png, rasterize, save_dataset, save_png, synth_scene, Bounds, RasterSpec, SynthSpec};
use lfinet_core::Lfinet;
use lfinet_tensor::ops::NormMode;
use lfinet_tensor::{no_grad, Tensor};

pub const CHECKPOINT_NAME: &str = "last.ckpt";
pub const METRICS_NAME: &str = "metrics.csv";

#[derive(Parser, Debug)]
#[command(name = "lfinet", version, about = "Road extraction from rasterized GNSS trajectories")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Global {
    /// JSON run configuration
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (or file, for `rasterize`)
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Rasterize a trajectory CSV into an 8-bit PNG plus a JSON sidecar
    Rasterize {
        #[arg(long)]
        input: PathBuf,
        /// lon_min,lat_min,lon_max,lat_max
        #[arg(long, value_parser = parse_bounds, allow_hyphen_values = true)]
        bounds: Bounds,
        /// HEIGHT,WIDTH
        #[arg(long, value_parser = parse_grid, default_value = "256,256")]
        grid: (usize, usize),
    },
    /// Write the Laplacian levels and low-frequency base of a PNG
    Decompose {
        #[arg(long)]
        input: PathBuf,
    },
    /// Generate a synthetic dataset with a manifest
    Synth {
        #[arg(long, default_value_t = 16)]
        count: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
    },
    /// Train on the configured manifest
    Train,
    /// Predict a probability map and binary mask for one image
    Infer {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        input: PathBuf,
        /// Also write channel-mean maps of every intermediate stage
        #[arg(long)]
        dump_intermediates: bool,
    },
    /// Score a checkpoint on a dataset manifest
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Run finite-difference gradient checks
    Gradcheck {
        #[arg(long, default_value = "all", value_parser = parse_scope)]
        scope: Scope,
    },
}

fn parse_bounds(s: &str) -> Result<Bounds, String> {
    let v: Vec<f64> = s.split(',').map(|t| t.trim().parse::<f64>().map_err(|e| format!("{t:?}: {e}"))).collect::<Result<_, _>>()?;
    match v[..] {
        [lon_min, lat_min, lon_max, lat_max] => Ok(Bounds { lon_min, lat_min, lon_max, lat_max }),
        _ => Err(format!("expected 4 comma-separated numbers, got {}", v.len())),
    }
}

fn parse_grid(s: &str) -> Result<(usize, usize), String> {
    let (h, w) = s.split_once(',').ok_or_else(|| "expected HEIGHT,WIDTH".to_string())?;
    let p = |t: &str| t.trim().parse::<usize>().map_err(|e| format!("{t:?}: {e}"));
    Ok((p(h)?, p(w)?))
}

fn parse_scope(s: &str) -> Result<Scope, String> {
    s.parse().map_err(|e: lfinet_core::Error| e.to_string())
}

/// Caps the worker pool when `LFINET_THREADS` is set.
pub fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var("LFINET_THREADS") {
        let n: usize = v.parse().with_context(|| format!("LFINET_THREADS={v:?} is not a number"))?;
        ensure!(n > 0, "LFINET_THREADS must be positive");
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    init_threads()?;
    let g = cli.global;
    match cli.command {
        Command::Rasterize { input, bounds, grid } => {
            let out = g.out.context("rasterize needs --out FILE.png")?;
            cmd_rasterize(&input, bounds, grid, &out)
        }
        Command::Decompose { input } => {
            let out = g.out.context("decompose needs --out DIR")?;
            let e = cmd_decompose(&input, &out)?;
            println!("max reconstruction error: {e:e}");
            Ok(())
        }
        Command::Synth { count, size } => {
            let cfg = load_config(&g)?;
            let out = g.out.context("synth needs --out DIR")?;
            let manifest = cmd_synth(cfg.seed, count, size, &out)?;
            println!("wrote {count} pairs, manifest {}", manifest.display());
            Ok(())
        }
        Command::Train => cmd_train(&load_config(&g)?),
        Command::Infer { checkpoint, input, dump_intermediates } => {
            let cfg = load_config(&g)?;
            let ckpt = checkpoint.or(cfg.checkpoint).context("infer needs --checkpoint or a configured checkpoint")?;
            cmd_infer(&ckpt, &input, &cfg.out_dir, dump_intermediates)
        }
        Command::Eval { checkpoint, manifest } => {
            let cfg = load_config(&g)?;
            let ckpt = checkpoint.or(cfg.checkpoint.clone()).context("eval needs --checkpoint or a configured checkpoint")?;
            let manifest = manifest.or(cfg.manifest.clone()).context("eval needs --manifest or a configured manifest")?;
            let report = cmd_eval(&ckpt, &manifest, &cfg.out_dir)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(())
        }
        Command::Gradcheck { scope } => cmd_gradcheck(scope),
    }
}

/// Config file (or defaults) with command-line overrides applied.
pub fn load_config(g: &Global) -> Result<RunConfig> {
    let mut cfg = match &g.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(o) = &g.out {
        cfg.out_dir = o.clone();
    }
    Ok(cfg)
}

fn create_dir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).with_context(|| format!("creating {}", p.display()))
}

#[derive(Serialize)]
struct RasterSidecar {
    bounds: Bounds,
    height: usize,
    width: usize,
    points: usize,
    clamped: usize,
}

pub fn cmd_rasterize(input: &Path, bounds: Bounds, (height, width): (usize, usize), out: &Path) -> Result<()> {
    let log = read_csv(input)?;
    let spec = RasterSpec { bounds, height, width };
    let (img, report) = rasterize(&log, &spec)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    save_png(out, &img)?;
    let sidecar = out.with_extension("json");
    let meta = RasterSidecar { bounds, height, width, points: report.points, clamped: report.clamped };
    std::fs::write(&sidecar, serde_json::to_string_pretty(&meta)? + "\n").with_context(|| format!("writing {}", sidecar.display()))?;
    if report.clamped > 0 {
        eprintln!("warning: {} of {} points fell outside the bounds", report.clamped, report.points);
    }
    println!("wrote {} ({}x{}, {} points)", out.display(), height, width, report.points);
    Ok(())
}

/// Signed detail level to a viewable gray: 0 maps to mid-gray.
pub fn level_to_gray(v: f32) -> f32 {
    ((128.0 + 4.0 * 255.0 * v) / 255.0).clamp(0.0, 1.0)
}

fn tensor_plane(t: &Tensor<f32>) -> Result<Raster> {
    Ok(unstack(t, 0)?.swap_remove(0))
}

/// Writes `L0.png`, `L1.png`, `L2.png` and `base.png`; returns the maximum
/// absolute reconstruction error.
pub fn cmd_decompose(input: &Path, out: &Path) -> Result<f32> {
    let img = load_png(input)?;
    let (padded, (rows, cols)) = img.pad_to_multiple(SIZE_MULTIPLE);
    if rows + cols > 0 {
        println!("padded {}x{} to {}x{} (+{rows} rows, +{cols} cols)", img.height, img.width, padded.height, padded.width);
    }
    let x = padded.to_tensor::<f32>();
    let d = laplacian_decompose(&x)?;
    let err = max_abs_diff(&laplacian_reconstruct(&d)?, &x);
    create_dir(out)?;
    for (k, level) in d.levels.iter().enumerate() {
        let mut r = tensor_plane(level)?;
        r.data.iter_mut().for_each(|v| *v = level_to_gray(*v));
        save_png(&out.join(format!("L{k}.png")), &r)?;
    }
    save_png(&out.join("base.png"), &tensor_plane(&d.base)?)?;
    Ok(err)
}

pub fn max_abs_diff(a: &Tensor<f32>, b: &Tensor<f32>) -> f32 {
    a.data().iter().zip(b.data().iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f32::max)
}

pub fn cmd_synth(seed: u64, count: usize, size: usize, out: &Path) -> Result<PathBuf> {
    ensure!(count > 0, "count must be positive");
    let spec = SynthSpec { size };
    let pairs = (0..count as u64)
        .map(|i| {
            let mut p = synth_scene(derive_seed(seed, Stream::Synth, i), &spec)?;
            p.id = format!("synth_{i:04}");
            Ok(p)
        })
        .collect::<lfinet_core::Result<Vec<_>>>()?;
    Ok(save_dataset(out, &pairs)?)
}

pub fn cmd_train(cfg: &RunConfig) -> Result<()> {
    let manifest = cfg.manifest.as_ref().context("train needs a `manifest` in the config")?;
    let data = load_dataset(manifest)?;
    ensure!(!data.is_empty(), "{} lists no samples", manifest.display());
    let [h, w] = cfg.image_size;
    for p in &data {
        if p.image.dims() != (h, w) {
            bail!("sample {} is {}x{}, config image_size is {h}x{w}", p.id, p.image.height, p.image.width);
        }
    }
    create_dir(&cfg.out_dir)?;
    let saved = cfg.out_dir.join("config.json");
    std::fs::write(&saved, serde_json::to_string_pretty(cfg)? + "\n").with_context(|| format!("writing {}", saved.display()))?;

    let model = Lfinet::<f32>::new(cfg.model(), derive_seed(cfg.seed, Stream::Init, 0))?;
    let training = cfg.training();
    let mut trainer = Trainer::new(&model, training.clone(), cfg.seed)?;
    let mut log = MetricsLog::create(&cfg.out_dir.join(METRICS_NAME))?;
    let ckpt = cfg.out_dir.join(CHECKPOINT_NAME);
    for epoch in 0..training.epochs {
        let stats = trainer.train_epoch(&data)?;
        log.append(&stats)?;
        checkpoint::save(&ckpt, &model, derive_seed(cfg.seed, Stream::Init, 0), Some(&training), epoch + 1)?;
        println!(
            "epoch {:>4}  loss {:.5}  dice {:.5}  bce {:.5}  train_iou {:.4}",
            stats.epoch, stats.loss, stats.dice, stats.bce, stats.train_iou
        );
    }
    Ok(())
}

fn channel_mean(t: &Tensor<f32>) -> Result<Raster> {
    let (_, c, h, w) = t.dims4("dump")?;
    let d = t.data();
    let mut out = Raster::zeros(h, w);
    for ch in 0..c {
        for (o, v) in out.data.iter_mut().zip(&d[ch * h * w..(ch + 1) * h * w]) {
            *o += v / c as f32;
        }
    }
    Ok(out)
}

fn normalize(mut r: Raster) -> Raster {
    let (lo, hi) = r.data.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    r.data.iter_mut().for_each(|v| *v = (*v - lo) / span);
    r
}

pub fn cmd_infer(ckpt: &Path, input: &Path, out: &Path, dump: bool) -> Result<()> {
    let (_, model) = checkpoint::load(ckpt)?;
    let img = load_png(input)?;
    let [h, w] = model.config.image_size;
    ensure!(img.dims() == (h, w), "{} is {}x{}, the model expects {h}x{w}", input.display(), img.height, img.width);
    create_dir(out)?;
    let prob = predict(&model, std::slice::from_ref(&img), 1)?.swap_remove(0);
    save_png(&out.join("prob.png"), &prob)?;
    save_png(&out.join("mask.png"), &prob.binarize())?;
    if dump {
        let dir = out.join("intermediates");
        create_dir(&dir)?;
        let it = no_grad(|| model.forward_detailed(&img.to_tensor::<f32>(), NormMode::Eval))?;
        let mut maps: Vec<(String, &Tensor<f32>)> = Vec::new();
        for (k, l) in it.levels.iter().enumerate() {
            maps.push((format!("lms_L{k}"), l));
        }
        maps.push(("lms_base".into(), &it.base));
        for (k, t) in it.hfb.iter().enumerate() {
            maps.push((format!("hfb{k}"), t));
        }
        maps.push(("st_prior".into(), &it.prior));
        for (k, f) in it.fgm.iter().enumerate() {
            maps.push((format!("fgm{k}_gate"), &f.gate));
            maps.push((format!("fgm{k}_output"), &f.output));
        }
        for (k, t) in it.decoder_states.iter().enumerate() {
            maps.push((format!("decoder{k}"), t));
        }
        for (name, t) in maps {
            save_png(&dir.join(format!("{name}.png")), &normalize(channel_mean(t)?))?;
        }
    }
    println!("wrote {} and {}", out.join("prob.png").display(), out.join("mask.png").display());
    Ok(())
}

pub fn cmd_eval(ckpt: &Path, manifest: &Path, out: &Path) -> Result<lfinet_core::metrics::EvalReport> {
    let (_, model) = checkpoint::load(ckpt)?;
    let data = load_dataset(manifest)?;
    let ev = evaluate_model(&model, &data, 8)?;
    create_dir(out)?;
    write_rows_csv(&out.join("per_sample.csv"), &ev.rows)?;
    write_report_json(&out.join("report.json"), &ev.report)?;
    for s in &ev.report.skipped {
        eprintln!("warning: skipped {}: {}", s.id, s.reason);
    }
    Ok(ev.report)
}

pub fn cmd_gradcheck(scope: Scope) -> Result<()> {
    let reports = suites::run(scope)?;
    let failed = reports.iter().filter(|r| !r.passed()).count();
    for r in &reports {
        println!("{r}");
    }
    ensure!(failed == 0, "{failed} of {} gradient checks exceeded tolerance", reports.len());
    println!("all {} gradient checks passed", reports.len());
    Ok(())
}
