//! The single-step denoising operator, a deterministic toy implementation, and
//! the training-sample machinery (masks, anchors, velocity loss).
//!
//! A [`Denoiser`] is split into [`Denoiser::prepare`], which digests a
//! condition once, and [`Denoiser::velocity`], which is called every step.
//! Tiled loops prepare once per tile and reuse the context for all steps.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::sampler;
use crate::video::{MaskVideo, VideoTensor};

/// Temporal regime of the operator: sparse keyframe stacks or dense clips.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DenoiseMode {
    Sparse,
    Dense,
}

/// Masked video plus mask, with per-frame guidance flags.
///
/// A frame whose mask is entirely 1 at full extent is a guidance frame: its
/// content is trusted as-is. Every other frame must be zero wherever the mask
/// is 1. The flag is fixed when the condition is built and survives cropping,
/// so a spatial tile lying wholly inside the outpaint region is not mistaken
/// for guidance.
#[derive(Debug, Clone, PartialEq)]
pub struct Condition {
    video: VideoTensor,
    mask: MaskVideo,
    guidance: Vec<bool>,
}

impl Condition {
    /// Validate an already-masked video against its mask.
    pub fn new(video: VideoTensor, mask: MaskVideo) -> Result<Self> {
        mask.ensure_matches(&video)?;
        let guidance: Vec<bool> = (0..mask.frames()).map(|f| mask.frame_all_ones(f)).collect();
        let c = video.channels();
        for (f, &is_guide) in guidance.iter().enumerate() {
            if is_guide {
                continue;
            }
            let frame = video.frame(f);
            let m = mask.as_tensor().frame(f);
            for (p, &mv) in m.iter().enumerate() {
                if mv == 1.0 && frame[p * c..(p + 1) * c].iter().any(|&v| v != 0.0) {
                    return Err(Error::Value(format!(
                        "condition frame {f} is non-zero inside the generate region"
                    )));
                }
            }
        }
        Ok(Self {
            video,
            mask,
            guidance,
        })
    }

    /// Zero the generate region of non-guidance frames, then build the condition.
    pub fn masked(video: &VideoTensor, mask: &MaskVideo) -> Result<Self> {
        mask.ensure_matches(video)?;
        let mut v = video.clone();
        let c = v.channels();
        for f in 0..mask.frames() {
            if mask.frame_all_ones(f) {
                continue;
            }
            let m = mask.as_tensor().frame(f).to_vec();
            let frame = v.frame_mut(f);
            for (p, mv) in m.into_iter().enumerate() {
                if mv == 1.0 {
                    frame[p * c..(p + 1) * c].fill(0.0);
                }
            }
        }
        Self::new(v, mask.clone())
    }

    pub fn video(&self) -> &VideoTensor {
        &self.video
    }

    pub fn mask(&self) -> &MaskVideo {
        &self.mask
    }

    pub fn is_guidance(&self, f: usize) -> bool {
        self.guidance[f]
    }

    pub fn guidance_flags(&self) -> &[bool] {
        &self.guidance
    }

    /// Voxel is trusted: observed, or part of a guidance frame.
    #[inline]
    pub fn is_known(&self, f: usize, y: usize, x: usize) -> bool {
        self.guidance[f] || !self.mask.is_generate(f, y, x)
    }

    pub fn crop(
        &self,
        frames: std::ops::Range<usize>,
        rows: std::ops::Range<usize>,
        cols: std::ops::Range<usize>,
    ) -> Result<Condition> {
        Ok(Self {
            video: self
                .video
                .crop(frames.clone(), rows.clone(), cols.clone())?,
            mask: self.mask.crop(frames.clone(), rows, cols)?,
            guidance: self.guidance[frames].to_vec(),
        })
    }

    pub fn select_frames(&self, indices: &[usize]) -> Result<Condition> {
        Ok(Self {
            video: self.video.select_frames(indices)?,
            mask: self.mask.select_frames(indices)?,
            guidance: indices.iter().map(|&i| self.guidance[i]).collect(),
        })
    }
}

/// One call of the denoising operator.
#[derive(Debug, Clone, Copy)]
pub struct DenoiseRequest<'a> {
    pub z: &'a VideoTensor,
    pub condition: &'a Condition,
    pub t: f64,
    pub mode: DenoiseMode,
}

impl DenoiseRequest<'_> {
    pub fn validate(&self) -> Result<()> {
        self.z
            .ensure_same_shape(self.condition.video(), "latent vs condition")?;
        if !(self.t > 0.0 && self.t <= 1.0) {
            return Err(Error::Schedule(format!(
                "denoise called at t = {}, no step remains",
                self.t
            )));
        }
        Ok(())
    }
}

/// Single-step velocity predictor `D(z_t; condition, mask)`.
pub trait Denoiser: Sync + Send {
    type Context: Send + Sync;

    /// Digest a condition; the context is reused for every step on the same tile.
    fn prepare(&self, condition: &Condition, mode: DenoiseMode) -> Result<Self::Context>;

    /// Predicted velocity for latent `z` at time `t > 0`; same shape as `z`.
    fn velocity(&self, ctx: &Self::Context, z: &VideoTensor, t: f64) -> Result<VideoTensor>;

    fn denoise(&self, req: &DenoiseRequest<'_>) -> Result<VideoTensor> {
        req.validate()?;
        let ctx = self.prepare(req.condition, req.mode)?;
        self.velocity(&ctx, req.z, req.t)
    }
}

/// Parameters of the toy operator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenoiserConfig {
    /// Temporal distance scale for sparse keyframe stacks (pixels per frame step).
    pub lambda_sparse: f64,
    /// Temporal distance scale for dense clips.
    pub lambda_dense: f64,
    /// Search radius of the inverse-distance fill, in the scaled metric.
    pub radius: f64,
    /// Prior mean used where no known voxel lies within the radius.
    #[serde(default)]
    pub fill_floor: f64,
    /// Prior variance of unreachable content. 0 pins those voxels to `fill_floor`.
    #[serde(default = "default_prior_var")]
    pub prior_var: f64,
    /// Half-width of the box over which the latent is averaged for unreachable voxels.
    #[serde(default = "default_prior_radius")]
    pub prior_radius: usize,
    /// Temporal half-width of the same box, in frames.
    #[serde(default = "default_prior_frames")]
    pub prior_frames: usize,
}

fn default_prior_var() -> f64 {
    0.25
}

fn default_prior_radius() -> usize {
    3
}

fn default_prior_frames() -> usize {
    2
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            lambda_sparse: 8.0,
            lambda_dense: 2.0,
            radius: 10.0,
            fill_floor: 0.0,
            prior_var: default_prior_var(),
            prior_radius: default_prior_radius(),
            prior_frames: default_prior_frames(),
        }
    }
}

impl DenoiserConfig {
    // negated comparisons so NaN is rejected too
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_sparse > 0.0 && self.lambda_dense > 0.0) {
            return Err(Error::Config("denoiser lambdas must be positive".into()));
        }
        if !(self.radius >= 1.0) {
            return Err(Error::Config("denoiser radius must be at least 1".into()));
        }
        if !(self.prior_var >= 0.0) || !self.fill_floor.is_finite() {
            return Err(Error::Config(
                "prior_var must be >= 0 and fill_floor finite".into(),
            ));
        }
        Ok(())
    }

    pub fn lambda(&self, mode: DenoiseMode) -> f64 {
        match mode {
            DenoiseMode::Sparse => self.lambda_sparse,
            DenoiseMode::Dense => self.lambda_dense,
        }
    }
}

/// Per-pixel classification of a prepared condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VoxelKind {
    /// Observed or guidance; the clean value is the condition.
    Known,
    /// Generate region with at least one known voxel in range; clean value is the fill.
    Filled,
    /// Generate region with nothing in range; clean value comes from the prior.
    Unreached,
}

/// Inverse-squared-distance fill of the generate region from known voxels.
#[derive(Debug, Clone)]
pub struct FillField {
    frames: usize,
    height: usize,
    width: usize,
    channels: usize,
    kinds: Vec<VoxelKind>,
    /// Clean estimate per element for `Known`/`Filled`; `fill_floor` for `Unreached`.
    values: Vec<f64>,
}

impl FillField {
    pub fn kind(&self, f: usize, y: usize, x: usize) -> VoxelKind {
        self.kinds[(f * self.height + y) * self.width + x]
    }

    pub fn value(&self, f: usize, y: usize, x: usize, c: usize) -> f64 {
        self.values[((f * self.height + y) * self.width + x) * self.channels + c]
    }

    /// The clean estimate as a tensor (unreached voxels hold `fill_floor`).
    pub fn to_tensor(&self) -> VideoTensor {
        VideoTensor::new(
            self.frames,
            self.height,
            self.width,
            self.channels,
            self.values.clone(),
        )
        .expect("fill field shape valid")
    }
}

/// Compute the fill for every generate voxel:
/// `sum(w_j v_j) / sum(w_j)` with `w_j = 1 / d_j^2` over known voxels with
/// `d^2 = dx^2 + dy^2 + (lambda * df)^2 <= radius^2`.
pub fn idw_fill(condition: &Condition, lambda: f64, radius: f64, floor: f64) -> FillField {
    let video = condition.video();
    let (nf, h, w, c) = (
        video.frames(),
        video.height(),
        video.width(),
        video.channels(),
    );
    let r2 = radius * radius;

    // bounding box of known pixels per frame; frames with none are skipped
    let bbox: Vec<Option<(usize, usize, usize, usize)>> = (0..nf)
        .map(|f| {
            if condition.is_guidance(f) {
                return Some((0, h - 1, 0, w - 1));
            }
            let mut b: Option<(usize, usize, usize, usize)> = None;
            for y in 0..h {
                for x in 0..w {
                    if condition.is_known(f, y, x) {
                        b = Some(match b {
                            None => (y, y, x, x),
                            Some((y0, y1, x0, x1)) => (y0.min(y), y1.max(y), x0.min(x), x1.max(x)),
                        });
                    }
                }
            }
            b
        })
        .collect();

    let max_df = (radius / lambda).floor() as i64;
    let mut kinds = vec![VoxelKind::Known; nf * h * w];
    let mut values = video.data().to_vec();
    let mut acc = vec![0.0f64; c];
    for f in 0..nf {
        for y in 0..h {
            for x in 0..w {
                if condition.is_known(f, y, x) {
                    continue;
                }
                let pix = (f * h + y) * w + x;
                acc.iter_mut().for_each(|a| *a = 0.0);
                let mut wsum = 0.0;
                for df in -max_df..=max_df {
                    let f2 = f as i64 + df;
                    if f2 < 0 || f2 >= nf as i64 {
                        continue;
                    }
                    let f2 = f2 as usize;
                    let Some((by0, by1, bx0, bx1)) = bbox[f2] else {
                        continue;
                    };
                    let dt = lambda * df as f64;
                    let rem = r2 - dt * dt;
                    if rem < 0.0 {
                        continue;
                    }
                    let ry = isqrt_floor(rem);
                    let ylo = (y as i64 - ry).max(by0 as i64);
                    let yhi = (y as i64 + ry).min(by1 as i64);
                    for y2 in ylo..=yhi {
                        let dy = (y2 - y as i64) as f64;
                        let rem_x = rem - dy * dy;
                        if rem_x < 0.0 {
                            continue;
                        }
                        let rx = isqrt_floor(rem_x);
                        let xlo = (x as i64 - rx).max(bx0 as i64);
                        let xhi = (x as i64 + rx).min(bx1 as i64);
                        let y2 = y2 as usize;
                        for x2 in xlo..=xhi {
                            let x2 = x2 as usize;
                            if !condition.is_known(f2, y2, x2) {
                                continue;
                            }
                            let dx = x2 as f64 - x as f64;
                            let d2 = dx * dx + dy * dy + dt * dt;
                            let wgt = 1.0 / d2;
                            wsum += wgt;
                            let src = video.index(f2, y2, x2, 0);
                            for (ch, a) in acc.iter_mut().enumerate() {
                                *a += wgt * video.data()[src + ch];
                            }
                        }
                    }
                }
                let base = pix * c;
                if wsum > 0.0 {
                    kinds[pix] = VoxelKind::Filled;
                    for ch in 0..c {
                        values[base + ch] = acc[ch] / wsum;
                    }
                } else {
                    kinds[pix] = VoxelKind::Unreached;
                    values[base..base + c].fill(floor);
                }
            }
        }
    }
    FillField {
        frames: nf,
        height: h,
        width: w,
        channels: c,
        kinds,
        values,
    }
}

/// Largest integer `k >= 0` with `k^2 <= v`.
fn isqrt_floor(v: f64) -> i64 {
    let mut k = v.sqrt().floor() as i64;
    while (k + 1) as f64 * (k + 1) as f64 <= v {
        k += 1;
    }
    while k > 0 && (k as f64) * (k as f64) > v {
        k -= 1;
    }
    k
}

/// Deterministic, context-limited stand-in for a trained video outpainting model.
///
/// Known voxels map to the condition. Generate voxels within range of known
/// content map to their inverse-distance fill. Voxels out of range use the
/// posterior mean of a Gaussian prior `N(fill_floor, prior_var)` given the
/// box-averaged latent, which lets the latent trajectory carry content the
/// condition cannot supply.
#[derive(Debug, Clone, Default)]
pub struct ToyDenoiser {
    pub config: DenoiserConfig,
}

/// Prepared state of the toy operator for one tile.
#[derive(Debug, Clone)]
pub struct ToyContext {
    fill: FillField,
    prior_mean: f64,
    prior_var: f64,
    prior_radius: usize,
    prior_frames: usize,
    any_unreached: bool,
}

impl ToyContext {
    pub fn fill(&self) -> &FillField {
        &self.fill
    }
}

impl ToyDenoiser {
    pub fn new(config: DenoiserConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config })
    }

    /// Clean estimate `x0_hat` for latent `z` at time `t`.
    pub fn predict_x0(&self, ctx: &ToyContext, z: &VideoTensor, t: f64) -> Result<VideoTensor> {
        let fill = &ctx.fill;
        if z.frames() != fill.frames
            || z.height() != fill.height
            || z.width() != fill.width
            || z.channels() != fill.channels
        {
            return Err(Error::Shape(
                "latent does not match prepared condition".into(),
            ));
        }
        let mut out = fill.values.clone();
        if !ctx.any_unreached || ctx.prior_var == 0.0 {
            return VideoTensor::new(z.frames(), z.height(), z.width(), z.channels(), out);
        }
        let (nf, h, w, c) = (z.frames(), z.height(), z.width(), z.channels());
        let b = ctx.prior_radius;
        let bt = ctx.prior_frames;
        let m = ctx.prior_mean;
        let s2 = ctx.prior_var;
        let signal = 1.0 - t;
        // summed-volume table per channel over (frame, row, column)
        let (sw, sh) = (w + 1, (h + 1) * (w + 1));
        let mut sat = vec![0.0f64; (nf + 1) * sh];
        for ch in 0..c {
            for f in 0..nf {
                for y in 0..h {
                    let mut row = 0.0;
                    for x in 0..w {
                        row += z.at(f, y, x, ch);
                        let i = (f + 1) * sh + (y + 1) * sw + x + 1;
                        sat[i] = row + sat[i - sw] + sat[i - sh] - sat[i - sh - sw];
                    }
                }
            }
            for f in 0..nf {
                let f0 = f.saturating_sub(bt);
                let f1 = (f + bt).min(nf - 1) + 1;
                for y in 0..h {
                    for x in 0..w {
                        if fill.kind(f, y, x) != VoxelKind::Unreached {
                            continue;
                        }
                        let y0 = y.saturating_sub(b);
                        let y1 = (y + b).min(h - 1) + 1;
                        let x0 = x.saturating_sub(b);
                        let x1 = (x + b).min(w - 1) + 1;
                        let n = ((f1 - f0) * (y1 - y0) * (x1 - x0)) as f64;
                        let at = |f: usize, y: usize, x: usize| sat[f * sh + y * sw + x];
                        let sum = at(f1, y1, x1) - at(f0, y1, x1) - at(f1, y0, x1) - at(f1, y1, x0)
                            + at(f0, y0, x1)
                            + at(f0, y1, x0)
                            + at(f1, y0, x0)
                            - at(f0, y0, x0);
                        let mean = sum / n;
                        let gain = signal * s2 / (signal * signal * s2 + t * t / n);
                        out[z.index(f, y, x, ch)] = m + gain * (mean - signal * m);
                    }
                }
            }
        }
        VideoTensor::new(nf, h, w, c, out)
    }
}

impl Denoiser for ToyDenoiser {
    type Context = ToyContext;

    fn prepare(&self, condition: &Condition, mode: DenoiseMode) -> Result<ToyContext> {
        let fill = idw_fill(
            condition,
            self.config.lambda(mode),
            self.config.radius,
            self.config.fill_floor,
        );
        let any_unreached = fill.kinds.contains(&VoxelKind::Unreached);
        Ok(ToyContext {
            fill,
            prior_mean: self.config.fill_floor,
            prior_var: self.config.prior_var,
            prior_radius: self.config.prior_radius,
            prior_frames: self.config.prior_frames,
            any_unreached,
        })
    }

    fn velocity(&self, ctx: &ToyContext, z: &VideoTensor, t: f64) -> Result<VideoTensor> {
        if !(t > 0.0 && t <= 1.0) {
            return Err(Error::Schedule(format!(
                "denoise called at t = {t}, no step remains"
            )));
        }
        let x0 = self.predict_x0(ctx, z, t)?;
        z.zip_map(&x0, |zv, xv| (zv - xv) / t)
    }
}

/// Clean estimate of the toy operator for a single request.
pub fn toy_predict_x0(req: &DenoiseRequest<'_>, cfg: &DenoiserConfig) -> Result<VideoTensor> {
    req.validate()?;
    let toy = ToyDenoiser::new(cfg.clone())?;
    let ctx = toy.prepare(req.condition, req.mode)?;
    toy.predict_x0(&ctx, req.z, req.t)
}

/// Which frame edge a training band is attached to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Edge {
    Top,
    Bottom,
    Left,
    Right,
}

/// Mask one edge band of every frame, identical across frames.
pub fn band_mask(frames: usize, height: usize, width: usize, edge: Edge, frac: f64) -> MaskVideo {
    let dim = match edge {
        Edge::Top | Edge::Bottom => height,
        Edge::Left | Edge::Right => width,
    };
    let band = ((frac * dim as f64).round() as usize).clamp(1, dim.saturating_sub(1).max(1));
    MaskVideo::from_fn(frames, height, width, |_, y, x| match edge {
        Edge::Top => y < band,
        Edge::Bottom => y >= height - band,
        Edge::Left => x < band,
        Edge::Right => x >= width - band,
    })
}

/// Seeded edge-band training mask; returns the masked video and the mask.
pub fn training_mask(
    video: &VideoTensor,
    rng_seed: u64,
    min_frac: f64,
    max_frac: f64,
) -> Result<(VideoTensor, MaskVideo)> {
    if !(0.0 < min_frac && min_frac <= max_frac && max_frac < 1.0) {
        return Err(Error::Config(format!(
            "need 0 < min_frac <= max_frac < 1, got {min_frac}, {max_frac}"
        )));
    }
    let stream = rng::stream_id("training-mask");
    let edge = match rng::below(rng_seed, stream, 0, 4) {
        0 => Edge::Top,
        1 => Edge::Bottom,
        2 => Edge::Left,
        _ => Edge::Right,
    };
    let frac = min_frac + (max_frac - min_frac) * rng::uniform(rng_seed, stream, 1);
    let mask = band_mask(video.frames(), video.height(), video.width(), edge, frac);
    Ok((apply_mask(video, &mask)?, mask))
}

/// `video * (1 - mask)`.
pub fn apply_mask(video: &VideoTensor, mask: &MaskVideo) -> Result<VideoTensor> {
    mask.ensure_matches(video)?;
    let c = video.channels();
    let mut out = video.clone();
    for (p, &m) in mask.data().iter().enumerate() {
        if m == 1.0 {
            out.data_mut()[p * c..(p + 1) * c].fill(0.0);
        }
    }
    Ok(out)
}

/// Strided anchors starting at a seeded offset in `[0, min(stride, F))`.
pub fn anchor_frames(frames: usize, stride: usize, rng_seed: u64) -> Result<Vec<usize>> {
    if stride == 0 || frames == 0 {
        return Err(Error::Config(
            "anchor stride and frame count must be positive".into(),
        ));
    }
    let span = stride.min(frames) as u64;
    let offset = rng::below(rng_seed, rng::stream_id("anchor-offset"), 0, span) as usize;
    Ok(strided_anchors(frames, stride, offset))
}

pub fn strided_anchors(frames: usize, stride: usize, offset: usize) -> Vec<usize> {
    (offset..frames).step_by(stride.max(1)).collect()
}

/// Replace anchor frames with ground truth and mark them fully as guidance.
pub fn apply_anchors(
    masked: &VideoTensor,
    mask: &MaskVideo,
    ground_truth: &VideoTensor,
    anchors: &[usize],
) -> Result<(VideoTensor, MaskVideo)> {
    masked.ensure_same_shape(ground_truth, "anchor ground truth")?;
    let mut v = masked.clone();
    let mut m = mask.clone();
    for &a in anchors {
        if a >= v.frames() {
            return Err(Error::Bounds(format!(
                "anchor {a} of {} frames",
                v.frames()
            )));
        }
        v.frame_mut(a).copy_from_slice(ground_truth.frame(a));
        m.set_frame(a, true);
    }
    Ok((v, m))
}

/// Mean squared velocity error times the schedule weight.
pub fn training_loss(v_hat: &VideoTensor, v_star: &VideoTensor, t: f64) -> Result<f64> {
    v_hat.ensure_same_shape(v_star, "training loss")?;
    let n = v_hat.len() as f64;
    let mse = v_hat
        .data()
        .iter()
        .zip(v_star.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n;
    Ok(mse * sampler::weight(t))
}

/// One toy-scale training example: condition, noisy latent and velocity target.
#[derive(Debug, Clone)]
pub struct TrainingSample {
    pub condition: Condition,
    pub z_t: VideoTensor,
    pub v_star: VideoTensor,
    pub t: f64,
}

/// Build a training example from a clean clip following the masked-band recipe.
pub fn training_sample(
    target: &VideoTensor,
    rng_seed: u64,
    min_frac: f64,
    max_frac: f64,
    anchor_stride: usize,
) -> Result<TrainingSample> {
    let (masked, mask) = training_mask(target, rng_seed, min_frac, max_frac)?;
    let anchors = anchor_frames(target.frames(), anchor_stride, rng_seed)?;
    let (masked, mask) = apply_anchors(&masked, &mask, target, &anchors)?;
    let condition = Condition::new(masked, mask)?;
    let stream = rng::stream_id("training-noise");
    // keep t away from 0 so the velocity is defined
    let t = 0.02 + 0.98 * rng::uniform(rng_seed, stream, 0);
    let eps = rng::gaussian_like(target, rng_seed, stream ^ 1);
    let z_t = sampler::add_noise(target, &eps, t)?;
    let v_star = sampler::velocity_target(target, &eps)?;
    Ok(TrainingSample {
        condition,
        z_t,
        v_star,
        t,
    })
}
