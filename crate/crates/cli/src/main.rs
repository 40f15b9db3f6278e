//! `hlop`: synthesize test scenes, outpaint HLVD videos, evaluate and preview.
//!
//! Exit codes: 0 on success, 1 on runtime or stage errors, 2 on bad
//! configuration or usage.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use outpaint_core::io::{export_ppm, read_mask, read_raw, write_mask, write_raw};
use outpaint_core::metrics::{self, Region, RegionSelector, DATA_RANGE};
use outpaint_core::pipeline::{run_detailed, Mode, PipelineConfig};
use outpaint_core::scene::{make_case_with, preset, Canvas, Case, Preset, Rect, SceneSpec};
use outpaint_core::video::pad_video;
use outpaint_core::{MaskVideo, VideoTensor};

/// Version of the manifest and report layouts.
const FORMAT_VERSION: u32 = 1;

#[derive(Parser)]
#[command(
    name = "hlop",
    version,
    about = "Coarse-to-fine long video outpainting"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render an input/ground-truth pair from a scene file or a preset.
    Synth {
        /// Scene description (JSON); omit when using --preset.
        scene: Option<PathBuf>,
        #[arg(long)]
        preset: Option<Preset>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 64)]
        frames: usize,
        /// Canvas side for presets.
        #[arg(long, default_value_t = 64)]
        size: usize,
        /// Input window `x,y,width,height` in world pixels.
        #[arg(long)]
        crop: Option<RectArg>,
        /// Target window `x,y,width,height` in world pixels.
        #[arg(long)]
        full: Option<RectArg>,
        #[arg(long, value_enum, default_value = "follow")]
        canvas: CanvasArg,
        /// Output directory for input.hlvd, gt.hlvd, mask.hlvd, config.json, case.json.
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Run the pipeline on an HLVD input.
    Outpaint {
        /// Pipeline config, or a run manifest to reproduce.
        config: PathBuf,
        input: PathBuf,
        output: PathBuf,
        #[arg(long)]
        mode: Option<ModeArg>,
        /// Concurrent tiles: 0 for all cores, 1 for sequential.
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Ground truth; adds a metric report to the manifest.
        #[arg(long)]
        gt: Option<PathBuf>,
        /// Manifest path; defaults to `<output>.manifest.json`.
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Compare an output with ground truth per mask region.
    Eval {
        output: PathBuf,
        gt: PathBuf,
        mask: PathBuf,
        report: PathBuf,
    },
    /// Write every Nth frame as a binary PPM.
    ExportPpm {
        input: PathBuf,
        dir: PathBuf,
        #[arg(long, default_value_t = 1)]
        every: usize,
    },
    /// Run all four modes and print a comparison table.
    Ablate {
        config: PathBuf,
        input: PathBuf,
        gt: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        workers: Option<usize>,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum ModeArg {
    Full,
    SpatialOnly,
    TemporalOnly,
    Baseline,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Mode {
        match m {
            ModeArg::Full => Mode::Full,
            ModeArg::SpatialOnly => Mode::SpatialOnly,
            ModeArg::TemporalOnly => Mode::TemporalOnly,
            ModeArg::Baseline => Mode::Baseline,
        }
    }
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum CanvasArg {
    Follow,
    WorldFixed,
}

#[derive(Clone, Copy)]
struct RectArg(Rect);

impl FromStr for RectArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        if parts.len() != 4 {
            return Err(format!("expected x,y,width,height, got {s:?}"));
        }
        let bad = |p: &str| format!("bad number {p:?} in {s:?}");
        let x = parts[0].parse().map_err(|_| bad(parts[0]))?;
        let y = parts[1].parse().map_err(|_| bad(parts[1]))?;
        let w = parts[2].parse().map_err(|_| bad(parts[2]))?;
        let h = parts[3].parse().map_err(|_| bad(parts[3]))?;
        Ok(RectArg(Rect::new(x, y, w, h)))
    }
}

/// Failure with the exit code it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl Failure {
    fn config(error: impl Into<anyhow::Error>) -> Self {
        Self {
            code: 2,
            error: error.into(),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        let code = match error.downcast_ref::<outpaint_core::Error>() {
            Some(e) if e.is_config() => 2,
            _ => 1,
        };
        Self { code, error }
    }
}

impl From<outpaint_core::Error> for Failure {
    fn from(e: outpaint_core::Error) -> Self {
        anyhow::Error::from(e).into()
    }
}

type CliResult<T> = Result<T, Failure>;

/// Everything needed to reproduce a run.
#[derive(Debug, Serialize, Deserialize)]
struct RunManifest {
    format_version: u32,
    config: PipelineConfig,
    seed: u64,
    timings: BTreeMap<String, f64>,
    outputs: BTreeMap<String, PathBuf>,
    keyframes: Vec<usize>,
    rounds: usize,
    delta: usize,
    #[serde(default)]
    metrics: Option<Value>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn dispatch(command: Command) -> CliResult<()> {
    match command {
        Command::Synth {
            scene,
            preset: kind,
            seed,
            frames,
            size,
            crop,
            full,
            canvas,
            out,
        } => cmd_synth(scene, kind, seed, frames, size, crop, full, canvas, &out),
        Command::Outpaint {
            config,
            input,
            output,
            mode,
            workers,
            seed,
            gt,
            manifest,
        } => cmd_outpaint(
            &config,
            &input,
            &output,
            mode,
            workers,
            seed,
            gt.as_deref(),
            manifest,
        ),
        Command::Eval {
            output,
            gt,
            mask,
            report,
        } => cmd_eval(&output, &gt, &mask, &report),
        Command::ExportPpm { input, dir, every } => {
            let v = read_raw(&input).with_context(|| format!("reading {}", input.display()))?;
            if every == 0 {
                return Err(Failure::config(anyhow!("--every must be at least 1")));
            }
            let files = export_ppm(&v, &dir, every)?;
            println!("wrote {} frames to {}", files.len(), dir.display());
            Ok(())
        }
        Command::Ablate {
            config,
            input,
            gt,
            report,
            workers,
        } => cmd_ablate(&config, &input, &gt, report.as_deref(), workers),
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(Failure::config)?;
    serde_json::from_str(&text)
        .with_context(|| format!("config error in {}", path.display()))
        .map_err(Failure::config)
}

/// Write through a temporary sibling so readers never see a partial file.
fn write_atomic(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("renaming onto {}", path.display()))?;
    Ok(())
}

fn write_json(path: &Path, value: &impl Serialize) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

#[allow(clippy::too_many_arguments)]
fn cmd_synth(
    scene: Option<PathBuf>,
    kind: Option<Preset>,
    seed: u64,
    frames: usize,
    size: usize,
    crop: Option<RectArg>,
    full: Option<RectArg>,
    canvas: CanvasArg,
    out: &Path,
) -> CliResult<()> {
    let case: Case = match (scene, kind) {
        (Some(_), Some(_)) => {
            return Err(Failure::config(anyhow!(
                "give either a scene file or --preset, not both"
            )))
        }
        (None, None) => {
            return Err(Failure::config(anyhow!(
                "a scene file or --preset is required"
            )))
        }
        (None, Some(kind)) => {
            let mut p = preset(kind, seed, frames, size)?;
            if let Some(RectArg(r)) = crop {
                p.crop = r;
            }
            if let Some(RectArg(r)) = full {
                p.full = r;
            }
            p.make()?
        }
        (Some(path), None) => {
            let spec: SceneSpec = read_json(&path)?;
            let (Some(RectArg(crop)), Some(RectArg(full))) = (crop, full) else {
                return Err(Failure::config(anyhow!(
                    "--crop and --full are required with a scene file"
                )));
            };
            let canvas = match canvas {
                CanvasArg::Follow => Canvas::Follow,
                CanvasArg::WorldFixed => Canvas::WorldFixed,
            };
            make_case_with(&spec, frames, crop, full, canvas)?
        }
    };
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let pad = case.geometry.pad_spec();
    let (_, mask) = pad_video(&case.input, &pad)?;
    write_raw(out.join("input.hlvd"), &case.input)?;
    write_raw(out.join("gt.hlvd"), &case.ground_truth)?;
    write_mask(out.join("mask.hlvd"), &mask)?;
    let mut config = PipelineConfig::small(pad);
    config.seed = seed;
    write_json(&out.join("config.json"), &config)?;
    write_json(&out.join("case.json"), &case.geometry)?;
    println!(
        "wrote {}: {} frames, input {}x{}, target {}x{}",
        out.display(),
        case.input.frames(),
        case.input.height(),
        case.input.width(),
        case.ground_truth.height(),
        case.ground_truth.width()
    );
    Ok(())
}

/// A config file, or the config recorded in a manifest.
fn load_config(path: &Path) -> CliResult<PipelineConfig> {
    let value: Value = read_json(path)?;
    let inner = match value.get("format_version") {
        Some(_) => value
            .get("config")
            .cloned()
            .ok_or_else(|| Failure::config(anyhow!("manifest {} has no config", path.display())))?,
        None => value,
    };
    serde_json::from_value(inner)
        .with_context(|| format!("config error in {}", path.display()))
        .map_err(Failure::config)
}

fn seed_override(flag: Option<u64>) -> CliResult<Option<u64>> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var("HLOP_SEED") {
        Ok(s) => s
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Failure::config(anyhow!("HLOP_SEED={s:?} is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

/// `+inf` for identical inputs, `null` for an empty region.
fn db(v: Option<f64>) -> Value {
    match v {
        Some(x) if x.is_infinite() => json!("+inf"),
        Some(x) => json!(x),
        None => Value::Null,
    }
}

fn metric_report(output: &VideoTensor, gt: &VideoTensor, mask: &MaskVideo) -> CliResult<Value> {
    output.ensure_same_shape(gt, "output vs ground truth")?;
    mask.ensure_matches(output)?;
    let mut psnr = serde_json::Map::new();
    let mut mse = serde_json::Map::new();
    for region in Region::ALL {
        let sel = match region {
            Region::All => Some(RegionSelector::all(output.extent())),
            r => RegionSelector::from_mask(mask, r).ok(),
        };
        let (p, m) = match &sel {
            Some(s) => (
                Some(metrics::psnr(output, gt, s)?),
                Some(metrics::mse(output, gt, s)?),
            ),
            None => (None, None),
        };
        psnr.insert(region.name().into(), db(p));
        mse.insert(region.name().into(), m.map_or(Value::Null, |x| json!(x)));
    }
    let ssim = metrics::ssim(output, gt).ok();
    Ok(json!({
        "format_version": FORMAT_VERSION,
        "data_range": DATA_RANGE,
        "psnr": psnr,
        "mse": mse,
        "ssim": { "all": ssim.map_or(Value::Null, |x| json!(x)) },
    }))
}

#[allow(clippy::too_many_arguments)]
fn cmd_outpaint(
    config_path: &Path,
    input: &Path,
    output: &Path,
    mode: Option<ModeArg>,
    workers: Option<usize>,
    seed: Option<u64>,
    gt: Option<&Path>,
    manifest: Option<PathBuf>,
) -> CliResult<()> {
    let mut config = load_config(config_path)?;
    if let Some(s) = seed_override(seed)? {
        config.seed = s;
    }
    if let Some(m) = mode {
        config.mode = m.into();
    }
    if let Some(w) = workers {
        config.workers = w;
    }
    let video = read_raw(input).with_context(|| format!("reading {}", input.display()))?;
    let result = run_detailed(&config, &video)?;
    write_raw(output, &result.video)?;
    let metrics = match gt {
        Some(path) => {
            let gt = read_raw(path).with_context(|| format!("reading {}", path.display()))?;
            let mask = trim_mask(&result.mask, result.video.frames())?;
            // score what landed on disk, so `eval` on the same files agrees
            let written = read_raw(output)?;
            Some(metric_report(&written, &gt, &mask)?)
        }
        None => None,
    };
    let manifest_path = manifest.unwrap_or_else(|| {
        let mut p = output.as_os_str().to_owned();
        p.push(".manifest.json");
        PathBuf::from(p)
    });
    let record = RunManifest {
        format_version: FORMAT_VERSION,
        seed: config.seed,
        config,
        timings: result.timings.into_iter().collect(),
        outputs: BTreeMap::from([("video".to_string(), output.to_path_buf())]),
        keyframes: result.keyframes,
        rounds: result.rounds,
        delta: result.delta,
        metrics,
    };
    write_json(&manifest_path, &record)?;
    println!("wrote {} and {}", output.display(), manifest_path.display());
    Ok(())
}

/// The pipeline mask covers padded frames; keep the original count.
fn trim_mask(mask: &MaskVideo, frames: usize) -> CliResult<MaskVideo> {
    if mask.frames() == frames {
        return Ok(mask.clone());
    }
    Ok(mask.crop(0..frames, 0..mask.height(), 0..mask.width())?)
}

fn cmd_eval(output: &Path, gt: &Path, mask: &Path, report: &Path) -> CliResult<()> {
    let read = |p: &Path| read_raw(p).with_context(|| format!("reading {}", p.display()));
    let (out, gt) = (read(output)?, read(gt)?);
    let mask = read_mask(mask).with_context(|| format!("reading {}", mask.display()))?;
    let value = metric_report(&out, &gt, &mask)?;
    write_json(report, &value)?;
    println!(
        "{}",
        serde_json::to_string(&value).map_err(anyhow::Error::from)?
    );
    Ok(())
}

fn cmd_ablate(
    config_path: &Path,
    input: &Path,
    gt: &Path,
    report: Option<&Path>,
    workers: Option<usize>,
) -> CliResult<()> {
    let base = load_config(config_path)?;
    let video = read_raw(input).with_context(|| format!("reading {}", input.display()))?;
    let gt = read_raw(gt).with_context(|| format!("reading {}", gt.display()))?;
    let mut rows = Vec::new();
    println!(
        "{:<14} {:>12} {:>8} {:>12} {:>9}",
        "mode", "psnr_out_db", "ssim", "seam", "seconds"
    );
    for mode in Mode::ALL {
        let mut config = base.clone();
        config.mode = mode;
        if let Some(s) = seed_override(None)? {
            config.seed = s;
        }
        if let Some(w) = workers {
            config.workers = w;
        }
        let r = run_detailed(&config, &video).map_err(|e| anyhow!("mode {}: {e}", mode.name()))?;
        let mask = trim_mask(&r.mask, r.video.frames())?;
        r.video.ensure_same_shape(&gt, "output vs ground truth")?;
        let psnr = RegionSelector::from_mask(&mask, Region::Outpainted)
            .ok()
            .map(|s| metrics::psnr(&r.video, &gt, &s))
            .transpose()?;
        let ssim = metrics::ssim(&r.video, &gt).ok();
        let plan = config.tiling.spatiotemporal_plan(r.video.extent())?;
        let seam = metrics::seam_energy(&r.video, &plan)?;
        let seconds: f64 = r.timings.iter().map(|(_, s)| s).sum();
        println!(
            "{:<14} {:>12} {:>8} {:>12.6} {:>9.2}",
            mode.name(),
            psnr.map_or("-".into(), |p| format!("{p:.3}")),
            ssim.map_or("-".into(), |s| format!("{s:.4}")),
            seam,
            seconds
        );
        rows.push(json!({
            "mode": mode.name(),
            "psnr_outpainted": db(psnr),
            "ssim": ssim,
            "seam_energy": seam,
            "seconds": seconds,
        }));
    }
    if let Some(path) = report {
        write_json(
            path,
            &json!({ "format_version": FORMAT_VERSION, "data_range": DATA_RANGE, "modes": rows }),
        )?;
    }
    Ok(())
}
