//! Stage 2 and end-to-end orchestration.
//!
//! `run` pads the input, builds keyframe guidance at a working resolution,
//! completes every frame over temporal tiles, upsamples and refines over
//! spatio-temporal tiles, then trims the padded tail.

use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::denoiser::{apply_mask, Condition, DenoiseMode, Denoiser, DenoiserConfig, ToyDenoiser};
use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::gcg::{self, GcgConfig, GcgSettings};
use crate::rng;
use crate::sampler::{sdedit_start_stream, SampleSchedule};
use crate::tiling::{TilePlan, TiledSampler, TilingConfig};
use crate::video::{
    downsample_mask, pad_length, pad_video, resize_bicubic, trim_length, MaskVideo, PadSpec,
    VideoTensor,
};

/// Longest working side when none is configured.
pub const DEFAULT_WORKING_SIDE: usize = 768;

/// Which stages run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Keyframe guidance at working resolution, completion, refinement.
    #[default]
    Full,
    /// Downsample, complete and refine; no keyframe guidance.
    SpatialOnly,
    /// Keyframe guidance and completion at target resolution; no refinement.
    TemporalOnly,
    /// Tiled completion at target resolution only.
    Baseline,
}

impl Mode {
    pub const ALL: [Mode; 4] = [
        Mode::Full,
        Mode::SpatialOnly,
        Mode::TemporalOnly,
        Mode::Baseline,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Full => "full",
            Mode::SpatialOnly => "spatial_only",
            Mode::TemporalOnly => "temporal_only",
            Mode::Baseline => "baseline",
        }
    }

    fn uses_keyframes(self) -> bool {
        matches!(self, Mode::Full | Mode::TemporalOnly)
    }

    fn downsamples(self) -> bool {
        matches!(self, Mode::Full | Mode::SpatialOnly)
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown mode {s:?}")))
    }
}

/// Latent representation the denoiser works in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Codec {
    /// Pixel space.
    #[default]
    Identity,
    /// 8x average pooling on encode, bicubic upsampling on decode.
    AvgPool8,
}

impl Codec {
    pub fn factor(self) -> usize {
        match self {
            Codec::Identity => 1,
            Codec::AvgPool8 => 8,
        }
    }

    fn check(self, h: usize, w: usize) -> Result<()> {
        let k = self.factor();
        if !h.is_multiple_of(k) || !w.is_multiple_of(k) {
            return Err(Error::Config(format!(
                "{h}x{w} is not divisible by the codec factor {k}"
            )));
        }
        Ok(())
    }

    pub fn encode(self, video: &VideoTensor) -> Result<VideoTensor> {
        let k = self.factor();
        if k == 1 {
            return Ok(video.clone());
        }
        self.check(video.height(), video.width())?;
        let (h, w) = (video.height() / k, video.width() / k);
        let norm = (k * k) as f64;
        VideoTensor::from_fn(video.frames(), h, w, video.channels(), |f, y, x, c| {
            let mut s = 0.0;
            for dy in 0..k {
                for dx in 0..k {
                    s += video.at(f, y * k + dy, x * k + dx, c);
                }
            }
            s / norm
        })
    }

    pub fn encode_mask(self, mask: &MaskVideo) -> Result<MaskVideo> {
        let k = self.factor();
        if k == 1 {
            return Ok(mask.clone());
        }
        self.check(mask.height(), mask.width())?;
        downsample_mask(mask, mask.height() / k, mask.width() / k)
    }

    pub fn decode(self, latent: &VideoTensor) -> Result<VideoTensor> {
        let k = self.factor();
        if k == 1 {
            return Ok(latent.clone());
        }
        resize_bicubic(latent, latent.height() * k, latent.width() * k)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Resolution {
    pub height: usize,
    pub width: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    pub total_steps: usize,
    /// Refinement noise strength in (0, 1].
    pub strength: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            total_steps: 40,
            strength: 0.5,
        }
    }
}

/// Denoiser selection; only the toy backend exists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DenoiserSpec {
    Toy(DenoiserConfig),
}

impl Default for DenoiserSpec {
    fn default() -> Self {
        DenoiserSpec::Toy(DenoiserConfig::default())
    }
}

impl DenoiserSpec {
    pub fn build(&self) -> Result<ToyDenoiser> {
        match self {
            DenoiserSpec::Toy(cfg) => ToyDenoiser::new(cfg.clone()),
        }
    }
}

/// Everything `run` needs besides the input video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub pad: PadSpec,
    /// Resolution of keyframe guidance and temporal completion; defaults to
    /// the target with its longest side mapped to 768.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub working: Option<Resolution>,
    pub gcg: GcgConfig,
    pub tiling: TilingConfig,
    pub sampler: SamplerConfig,
    pub denoiser: DenoiserSpec,
    #[serde(default)]
    pub mode: Mode,
    pub seed: u64,
    /// Concurrent tiles: 0 for all cores, 1 for sequential.
    #[serde(default)]
    pub workers: usize,
    #[serde(default)]
    pub codec: Codec,
    /// Frame count is padded to a multiple of this and trimmed at the end.
    #[serde(default = "one")]
    pub length_multiple: usize,
}

fn one() -> usize {
    1
}

impl PipelineConfig {
    /// Defaults for a given pad spec.
    pub fn new(pad: PadSpec) -> Self {
        Self {
            pad,
            working: None,
            gcg: GcgConfig::default(),
            tiling: TilingConfig::default(),
            sampler: SamplerConfig::default(),
            denoiser: DenoiserSpec::default(),
            mode: Mode::Full,
            seed: 0,
            workers: 0,
            codec: Codec::Identity,
            length_multiple: 1,
        }
    }

    /// Settings for small synthetic scenes: half-resolution working size,
    /// short tiles and few keyframes.
    pub fn small(pad: PadSpec) -> Self {
        let working = Resolution {
            height: (pad.target_height / 2).max(1),
            width: (pad.target_width / 2).max(1),
        };
        Self {
            working: Some(working),
            gcg: GcgConfig {
                k: 5,
                delta: 5,
                delta_auto: false,
                tau: 8,
                swap_steps: 8,
            },
            tiling: TilingConfig {
                temporal: 16,
                temporal_overlap: 4,
                spatial: 32,
                spatial_overlap: 8,
            },
            ..Self::new(pad)
        }
    }

    pub fn working_resolution(&self) -> Resolution {
        let (th, tw) = (self.pad.target_height, self.pad.target_width);
        if let Some(r) = self.working {
            return r;
        }
        let long = th.max(tw);
        if long <= DEFAULT_WORKING_SIDE {
            return Resolution {
                height: th,
                width: tw,
            };
        }
        let scale = DEFAULT_WORKING_SIDE as f64 / long as f64;
        Resolution {
            height: ((th as f64 * scale).round() as usize).max(1),
            width: ((tw as f64 * scale).round() as usize).max(1),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let r = self.working_resolution();
        if r.height == 0 || r.width == 0 {
            return Err(Error::Config("working resolution must be non-zero".into()));
        }
        if r.height > self.pad.target_height || r.width > self.pad.target_width {
            return Err(Error::Config(format!(
                "working resolution {}x{} exceeds target {}x{}",
                r.height, r.width, self.pad.target_height, self.pad.target_width
            )));
        }
        if self.length_multiple == 0 {
            return Err(Error::Config("length_multiple must be at least 1".into()));
        }
        self.gcg.validate()?;
        SampleSchedule::new(self.sampler.total_steps, self.gcg.swap_steps)
            .map_err(|e| Error::Config(e.to_string()))?;
        if !(self.sampler.strength > 0.0 && self.sampler.strength <= 1.0) {
            return Err(Error::Config(format!(
                "sampler.strength {} outside (0, 1]",
                self.sampler.strength
            )));
        }
        let t = &self.tiling;
        if t.temporal == 0
            || t.spatial == 0
            || t.temporal_overlap >= t.temporal
            || t.spatial_overlap >= t.spatial
        {
            return Err(Error::Config(
                "tile overlaps must be smaller than tile sizes".into(),
            ));
        }
        match &self.denoiser {
            DenoiserSpec::Toy(cfg) => cfg.validate()?,
        }
        Ok(())
    }
}

/// Replace every keyframe by its guidance frame and mark it fully trusted.
/// With no keyframes the input comes back unchanged and `gcg` is ignored.
pub fn insert_guidance(
    video_ds: &VideoTensor,
    mask_ds: &MaskVideo,
    gcg: &VideoTensor,
    keys: &[usize],
) -> Result<(VideoTensor, MaskVideo)> {
    mask_ds.ensure_matches(video_ds)?;
    if keys.is_empty() {
        return Ok((video_ds.clone(), mask_ds.clone()));
    }
    if gcg.frames() != keys.len() {
        return Err(Error::Shape(format!(
            "{} guidance frames for {} keyframes",
            gcg.frames(),
            keys.len()
        )));
    }
    if (gcg.height(), gcg.width(), gcg.channels())
        != (video_ds.height(), video_ds.width(), video_ds.channels())
    {
        return Err(Error::Shape(
            "guidance frame size differs from video".into(),
        ));
    }
    let mut video = video_ds.clone();
    let mut mask = mask_ds.clone();
    for (i, &k) in keys.iter().enumerate() {
        if k >= video.frames() {
            return Err(Error::Bounds(format!(
                "keyframe {k} outside {} frames",
                video.frames()
            )));
        }
        video.frame_mut(k).copy_from_slice(gcg.frame(i));
        mask.set_frame(k, true);
    }
    Ok((video, mask))
}

/// Denoise every frame from pure noise over `plan_t` in dense mode.
#[allow(clippy::too_many_arguments)]
pub fn temporal_completion<D: Denoiser>(
    guided: &VideoTensor,
    guided_mask: &MaskVideo,
    denoiser: &D,
    plan_t: &TilePlan,
    sample: &SampleSchedule,
    seed: u64,
    executor: &Executor,
) -> Result<VideoTensor> {
    let cond = Condition::masked(guided, guided_mask)?;
    let sampler = TiledSampler::new(
        denoiser,
        &cond,
        plan_t,
        DenoiseMode::Dense,
        executor.clone(),
    )?;
    let z = rng::gaussian_like(guided, seed, rng::stream_id("temporal"));
    sampler.descend(z, sample, sample.total_steps())
}

/// Upsample, re-noise to `strength` and denoise against the padded input.
#[allow(clippy::too_many_arguments)]
pub fn spatial_refinement<D: Denoiser>(
    completed_ds: &VideoTensor,
    padded: &VideoTensor,
    mask: &MaskVideo,
    denoiser: &D,
    plan_st: &TilePlan,
    sample: &SampleSchedule,
    strength: f64,
    seed: u64,
    executor: &Executor,
) -> Result<VideoTensor> {
    mask.ensure_matches(padded)?;
    if completed_ds.frames() != padded.frames() {
        return Err(Error::Shape(
            "completed and padded frame counts differ".into(),
        ));
    }
    let upsampled = resize_bicubic(completed_ds, padded.height(), padded.width())?;
    let (z, level) =
        sdedit_start_stream(&upsampled, strength, sample, seed, rng::stream_id("refine"))?;
    let cond = Condition::masked(padded, mask)?;
    let sampler = TiledSampler::new(
        denoiser,
        &cond,
        plan_st,
        DenoiseMode::Dense,
        executor.clone(),
    )?;
    sampler.descend(z, sample, level)
}

/// Output plus per-stage bookkeeping.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub video: VideoTensor,
    /// Padded input and mask at target resolution, before trimming.
    pub padded: VideoTensor,
    pub mask: MaskVideo,
    pub timings: Vec<(String, f64)>,
    pub keyframes: Vec<usize>,
    pub rounds: usize,
    pub delta: usize,
}

struct Timer {
    timings: Vec<(String, f64)>,
}

impl Timer {
    fn stage<T>(&mut self, name: &'static str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let out = f().map_err(|e| e.in_stage(name))?;
        self.timings
            .push((name.to_string(), start.elapsed().as_secs_f64()));
        Ok(out)
    }
}

/// Run the configured pipeline with the toy denoiser.
pub fn run(config: &PipelineConfig, input: &VideoTensor) -> Result<VideoTensor> {
    Ok(run_detailed(config, input)?.video)
}

pub fn run_detailed(config: &PipelineConfig, input: &VideoTensor) -> Result<RunOutput> {
    let denoiser = config.denoiser.build().map_err(|e| e.in_stage("config"))?;
    run_with(config, input, &denoiser)
}

/// Run the configured pipeline with any denoiser.
pub fn run_with<D: Denoiser>(
    config: &PipelineConfig,
    input: &VideoTensor,
    denoiser: &D,
) -> Result<RunOutput> {
    config.validate().map_err(|e| e.in_stage("config"))?;
    let executor = Executor::with_workers(config.workers).map_err(|e| e.in_stage("config"))?;
    let sample = SampleSchedule::new(config.sampler.total_steps, config.gcg.swap_steps)?;
    let codec = config.codec;
    let seed = config.seed;
    let mut timer = Timer {
        timings: Vec::new(),
    };

    let (padded, mask, original) = timer.stage("pad", || {
        let (long, original) = pad_length(input, config.length_multiple)?;
        config
            .pad
            .validate(long.frames(), long.height(), long.width())?;
        let (padded, mask) = pad_video(&long, &config.pad)?;
        Ok((padded, mask, original))
    })?;
    let (th, tw) = (padded.height(), padded.width());
    let work = if config.mode.downsamples() {
        config.working_resolution()
    } else {
        Resolution {
            height: th,
            width: tw,
        }
    };

    let (video_ds, mask_ds) = timer.stage("downsample", || {
        let mask_ds = downsample_mask(&mask, work.height, work.width)?;
        let video_ds = apply_mask(&resize_bicubic(&padded, work.height, work.width)?, &mask_ds)?;
        Ok((video_ds, mask_ds))
    })?;

    let mut keyframes = Vec::new();
    let mut rounds = 0;
    let mut delta = config.gcg.delta;
    let (guided, guided_mask) = if config.mode.uses_keyframes() {
        let gcg_out = timer.stage("gcg", || {
            let lv = codec.encode(&video_ds)?;
            let lm = codec.encode_mask(&mask_ds)?;
            let lv = apply_mask(&lv, &lm)?;
            if config.gcg.delta_auto {
                delta = gcg::auto_delta(&lv, &lm)?;
            }
            let frames = lv.frames();
            let k = config.gcg.k.min(frames);
            let initial = gcg::select_keyframes(frames, k)?;
            // whole frames fit one tile unless the working frame exceeds the spatial tile
            let spatial = (lv.height().max(lv.width()) > config.tiling.spatial)
                .then_some((config.tiling.spatial, config.tiling.spatial_overlap));
            let settings = GcgSettings {
                k: config.gcg.k,
                delta,
                tau: config.gcg.tau,
                swap_steps: config.gcg.swap_steps,
                spatial,
                seed,
            };
            let r =
                gcg::multiscale_gcg(&lv, &lm, &initial, &settings, denoiser, &sample, &executor)?;
            Ok((codec.decode(&r.frames)?, r.indices.clone(), r.rounds()))
        })?;
        keyframes = gcg_out.1;
        rounds = gcg_out.2;
        timer.stage("guidance", || {
            insert_guidance(&video_ds, &mask_ds, &gcg_out.0, &keyframes)
        })?
    } else {
        (video_ds.clone(), mask_ds.clone())
    };

    let completed = timer.stage("temporal", || {
        let lv = codec.encode(&guided)?;
        let lm = codec.encode_mask(&guided_mask)?;
        let plan_t = if config.mode.downsamples() {
            config.tiling.temporal_plan(lv.extent())?
        } else {
            config.tiling.spatiotemporal_plan(lv.extent())?
        };
        let out = temporal_completion(&lv, &lm, denoiser, &plan_t, &sample, seed, &executor)?;
        codec.decode(&out)
    })?;

    let refined = if config.mode.downsamples() {
        timer.stage("refine", || {
            let lp = codec.encode(&padded)?;
            let lm = codec.encode_mask(&mask)?;
            let lc = codec.encode(&completed)?;
            let plan_st = config.tiling.spatiotemporal_plan(lp.extent())?;
            let out = spatial_refinement(
                &lc,
                &lp,
                &lm,
                denoiser,
                &plan_st,
                &sample,
                config.sampler.strength,
                seed,
                &executor,
            )?;
            codec.decode(&out)
        })?
    } else {
        completed
    };

    let video = timer.stage("trim", || trim_length(&refined, original))?;
    Ok(RunOutput {
        video,
        padded,
        mask,
        timings: timer.timings,
        keyframes,
        rounds,
        delta,
    })
}
