//! Stage 1: sparse keyframe guidance.
//!
//! A stack of evenly spaced keyframes is denoised together with one short
//! local window per keyframe. During the first `swap_steps` steps the stack's
//! latent at each keyframe is overwritten by the window's latent for the same
//! frame. Keyframes are then densified by midpoint insertion, treating the
//! frames already generated as fixed guidance, until no gap exceeds `tau`.

use serde::{Deserialize, Serialize};

use crate::denoiser::{Condition, DenoiseMode, Denoiser};
use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::pipeline::insert_guidance;
use crate::rng;
use crate::sampler::SampleSchedule;
use crate::tiling::{plan, TiledSampler};
use crate::video::{MaskVideo, VideoTensor};

/// Keyframes shared between consecutive stack segments.
pub const SEGMENT_OVERLAP: usize = 2;

/// Mean absolute inter-frame difference above which the auto stride picks 1.
pub const AUTO_DELTA_THRESHOLD: f64 = 0.05;

/// Stage-1 parameters as they appear in the pipeline config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GcgConfig {
    /// Frames per forward pass: keyframes per segment and frames per local window.
    #[serde(rename = "K")]
    pub k: usize,
    pub delta: usize,
    #[serde(default)]
    pub delta_auto: bool,
    pub tau: usize,
    pub swap_steps: usize,
}

impl Default for GcgConfig {
    fn default() -> Self {
        Self {
            k: 13,
            delta: 5,
            delta_auto: false,
            tau: 20,
            swap_steps: 8,
        }
    }
}

impl GcgConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.delta == 0 || self.tau == 0 {
            return Err(Error::Config(
                "gcg K, delta and tau must be at least 1".into(),
            ));
        }
        if self.k <= SEGMENT_OVERLAP {
            return Err(Error::Config(format!(
                "gcg K must exceed the segment overlap of {SEGMENT_OVERLAP}"
            )));
        }
        Ok(())
    }
}

/// Keyframes, their local windows and the swap budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyframeSchedule {
    pub indices: Vec<usize>,
    pub k: usize,
    pub delta: usize,
    pub windows: Vec<Vec<usize>>,
    pub swap_steps: usize,
    pub tau: usize,
}

impl KeyframeSchedule {
    /// Uniform keyframes with one window per keyframe.
    pub fn new(
        frames: usize,
        k: usize,
        delta: usize,
        swap_steps: usize,
        tau: usize,
    ) -> Result<Self> {
        let indices = select_keyframes(frames, k)?;
        let windows = indices
            .iter()
            .map(|&i| build_window(i, k, delta, frames).map(|(w, _)| w))
            .collect::<Result<_>>()?;
        Ok(Self {
            indices,
            k,
            delta,
            windows,
            swap_steps,
            tau,
        })
    }
}

/// `k_i = round(i (F - 1) / (K - 1))`.
pub fn select_keyframes(frames: usize, k: usize) -> Result<Vec<usize>> {
    if k == 0 || k > frames {
        return Err(Error::Config(format!(
            "cannot pick {k} keyframes from {frames} frames"
        )));
    }
    if k == 1 {
        return Ok(vec![0]);
    }
    let (num, den) = (frames - 1, k - 1);
    let mut out: Vec<usize> = (0..k).map(|i| (2 * i * num + den) / (2 * den)).collect();
    out.dedup();
    Ok(out)
}

/// Window of `K` frames with stride `delta` around keyframe `k`.
///
/// The window is centred on `k` when possible, otherwise slid by whole strides
/// so it stays inside `[0, F)` and still contains `k`. If no placement fits,
/// the stride is reduced to the largest one that does. Returns the window and
/// the stride used.
pub fn build_window(
    k: usize,
    big_k: usize,
    delta: usize,
    frames: usize,
) -> Result<(Vec<usize>, usize)> {
    if big_k == 0 || frames < big_k {
        return Err(Error::Config(format!(
            "window of {big_k} frames does not fit in {frames} frames"
        )));
    }
    if delta == 0 {
        return Err(Error::Config("window stride must be at least 1".into()));
    }
    if k >= frames {
        return Err(Error::Bounds(format!("keyframe {k} of {frames} frames")));
    }
    let centre = big_k / 2;
    for d in (1..=delta).rev() {
        let span = (big_k - 1) * d;
        if span > frames - 1 {
            continue;
        }
        // k sits at window slot j: start = k - j d, need start >= 0 and start + span <= F - 1
        let j_max = (k / d).min(big_k - 1);
        let j_min = (k + span).saturating_sub(frames - 1).div_ceil(d);
        if j_min > j_max {
            continue;
        }
        let j = centre.clamp(j_min, j_max);
        let start = k - j * d;
        return Ok(((0..big_k).map(|i| start + i * d).collect(), d));
    }
    Err(Error::Internal("stride 1 window must always fit".into()))
}

/// Largest gap between consecutive sorted indices.
pub fn max_index_gap(indices: &[usize]) -> Result<usize> {
    if indices.len() < 2 {
        return Err(Error::Value("max gap needs at least two indices".into()));
    }
    let mut s = indices.to_vec();
    s.sort_unstable();
    Ok(s.windows(2).map(|w| w[1] - w[0]).max().unwrap_or(0))
}

/// `floor((k_i + k_{i+1}) / 2)` for every adjacent pair further apart than `tau`.
pub fn midpoints(indices: &[usize], tau: usize) -> Vec<usize> {
    let mut out: Vec<usize> = indices
        .windows(2)
        .filter(|w| w[1] - w[0] > tau)
        .map(|w| (w[0] + w[1]) / 2)
        .filter(|m| !indices.contains(m))
        .collect();
    out.sort_unstable();
    out.dedup();
    out
}

/// Densification rounds allowed: `ceil(log2(F / tau)) + 2`.
pub fn round_cap(frames: usize, tau: usize) -> usize {
    let ratio = frames as f64 / tau.max(1) as f64;
    let extra = if ratio > 1.0 {
        ratio.log2().ceil() as usize
    } else {
        0
    };
    extra + 2
}

/// Mean absolute difference between consecutive frames over voxels observed in both.
pub fn mean_frame_difference(video: &VideoTensor, mask: &MaskVideo) -> Result<f64> {
    mask.ensure_matches(video)?;
    let c = video.channels();
    let (mut sum, mut n) = (0.0, 0usize);
    for f in 1..video.frames() {
        let (a, b) = (video.frame(f - 1), video.frame(f));
        let (ma, mb) = (mask.as_tensor().frame(f - 1), mask.as_tensor().frame(f));
        for p in 0..ma.len() {
            if ma[p] == 0.0 && mb[p] == 0.0 {
                for ch in 0..c {
                    sum += (a[p * c + ch] - b[p * c + ch]).abs();
                }
                n += c;
            }
        }
    }
    Ok(if n == 0 { 0.0 } else { sum / n as f64 })
}

/// Stride 1 for fast motion, 5 otherwise.
pub fn auto_delta(video: &VideoTensor, mask: &MaskVideo) -> Result<usize> {
    Ok(
        if mean_frame_difference(video, mask)? > AUTO_DELTA_THRESHOLD {
            1
        } else {
            5
        },
    )
}

/// Copy each window's latent at its keyframe into the stack, for `step < S`.
pub fn swap_globals(
    global_latents: &VideoTensor,
    window_latents: &[VideoTensor],
    schedule: &KeyframeSchedule,
    step: usize,
) -> Result<VideoTensor> {
    let mut out = global_latents.clone();
    if step >= schedule.swap_steps {
        return Ok(out);
    }
    if window_latents.len() != schedule.indices.len() || out.frames() != schedule.indices.len() {
        return Err(Error::Shape(
            "one window latent per keyframe required".into(),
        ));
    }
    for (i, (&k, win)) in schedule.indices.iter().zip(window_latents).enumerate() {
        let slot = window_slot(&schedule.windows[i], k)?;
        out.frame_mut(i).copy_from_slice(win.frame(slot));
    }
    Ok(out)
}

fn window_slot(window: &[usize], k: usize) -> Result<usize> {
    window
        .iter()
        .position(|&f| f == k)
        .ok_or_else(|| Error::Schedule(format!("keyframe {k} is not in its window {window:?}")))
}

/// How the stack and windows are denoised.
#[derive(Debug, Clone)]
pub struct GcgSettings {
    pub k: usize,
    pub delta: usize,
    pub tau: usize,
    pub swap_steps: usize,
    /// Spatial tile size and overlap for stack and windows; `None` keeps whole frames.
    pub spatial: Option<(usize, usize)>,
    pub seed: u64,
}

impl GcgSettings {
    pub fn from_config(
        cfg: &GcgConfig,
        delta: usize,
        spatial: Option<(usize, usize)>,
        seed: u64,
    ) -> Self {
        Self {
            k: cfg.k,
            delta,
            tau: cfg.tau,
            swap_steps: cfg.swap_steps,
            spatial,
            seed,
        }
    }
}

/// Keyframe stack with the record of every densification round.
#[derive(Debug, Clone)]
pub struct GcgResult {
    pub frames: VideoTensor,
    pub indices: Vec<usize>,
    /// `(indices, frames)` after the initial construction and after each round.
    pub history: Vec<(Vec<usize>, VideoTensor)>,
}

impl GcgResult {
    pub fn rounds(&self) -> usize {
        self.history.len().saturating_sub(1)
    }
}

/// Denoise the stack `keys` of `guided` together with one window per
/// non-anchor keyframe. Anchor keyframes come back exactly as given.
#[allow(clippy::too_many_arguments)]
fn denoise_stack<D: Denoiser>(
    guided: &VideoTensor,
    guided_mask: &MaskVideo,
    keys: &[usize],
    anchors: &[bool],
    settings: &GcgSettings,
    denoiser: &D,
    sample: &SampleSchedule,
    round: usize,
    executor: &Executor,
) -> Result<VideoTensor> {
    let frames = guided.frames();
    let (h, w) = (guided.height(), guided.width());
    let (sp, sp_overlap) = settings.spatial.unwrap_or((h.max(w), 0));
    let stack_cond = Condition::masked(
        &guided.select_frames(keys)?,
        &guided_mask.select_frames(keys)?,
    )?;
    let stack_plan = plan(
        stack_cond.video().extent(),
        settings.k,
        sp,
        sp,
        SEGMENT_OVERLAP,
        sp_overlap,
        sp_overlap,
    )?;
    let stack = TiledSampler::new(
        denoiser,
        &stack_cond,
        &stack_plan,
        DenoiseMode::Sparse,
        executor.clone(),
    )?;

    struct Window {
        stack_slot: usize,
        window_slot: usize,
        indices: Vec<usize>,
        cond: Condition,
    }
    let mut windows = Vec::new();
    if settings.swap_steps > 0 {
        for (slot, (&k, &anchor)) in keys.iter().zip(anchors).enumerate() {
            if anchor {
                continue;
            }
            let big_k = settings.k.min(frames);
            let (indices, _) = build_window(k, big_k, settings.delta, frames)?;
            let cond = Condition::masked(
                &guided.select_frames(&indices)?,
                &guided_mask.select_frames(&indices)?,
            )?;
            windows.push(Window {
                stack_slot: slot,
                window_slot: window_slot(&indices, k)?,
                indices,
                cond,
            });
        }
    }
    let window_plans = windows
        .iter()
        .map(|win| {
            plan(
                win.cond.video().extent(),
                win.indices.len(),
                sp,
                sp,
                0,
                sp_overlap,
                sp_overlap,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let window_samplers = executor.try_map(&windows, |i, win| {
        TiledSampler::new(
            denoiser,
            &win.cond,
            &window_plans[i],
            DenoiseMode::Sparse,
            Executor::sequential(),
        )
    })?;

    let mut z = frame_noise(stack_cond.video(), keys, settings.seed, round);
    let mut zw: Vec<VideoTensor> = windows
        .iter()
        .map(|win| frame_noise(win.cond.video(), &win.indices, settings.seed, round))
        .collect();

    for (step, t_from, t_to) in sample.descent() {
        z = stack.step(&z, t_from, t_to)?;
        if !windows.is_empty() {
            let idx: Vec<usize> = (0..windows.len()).collect();
            zw = executor.try_map(&idx, |i, _| window_samplers[i].step(&zw[i], t_from, t_to))?;
        }
        if sample.swaps_after(step) && step < settings.swap_steps {
            for (win, zwin) in windows.iter().zip(zw.iter()) {
                z.frame_mut(win.stack_slot)
                    .copy_from_slice(zwin.frame(win.window_slot));
            }
        }
    }
    // anchors are left exactly as they were
    for (slot, &anchor) in anchors.iter().enumerate() {
        if anchor {
            z.frame_mut(slot)
                .copy_from_slice(stack_cond.video().frame(slot));
        }
    }
    Ok(z)
}

/// Initial noise for a stack of video frames, keyed by frame index so every
/// trajectory that contains frame `f` starts from the same noise there.
pub fn frame_noise(shape: &VideoTensor, frames: &[usize], seed: u64, round: usize) -> VideoTensor {
    let (h, w, c) = (shape.height(), shape.width(), shape.channels());
    let data = frames
        .iter()
        .flat_map(|&f| {
            let stream = rng::stream_id(&format!("gcg/{round}/frame/{f}"));
            (0..(h * w * c) as u64).map(move |i| rng::normal(seed, stream, i))
        })
        .collect();
    VideoTensor::new(frames.len(), h, w, c, data).expect("noise shape matches")
}

/// One construction pass over `schedule` (no densification).
#[allow(clippy::too_many_arguments)]
pub fn construct_gcg<D: Denoiser>(
    video_ds: &VideoTensor,
    mask_ds: &MaskVideo,
    schedule: &KeyframeSchedule,
    denoiser: &D,
    sample: &SampleSchedule,
    rng_seed: u64,
    executor: &Executor,
) -> Result<VideoTensor> {
    let settings = GcgSettings {
        k: schedule.k,
        delta: schedule.delta,
        tau: schedule.tau,
        swap_steps: schedule.swap_steps,
        spatial: None,
        seed: rng_seed,
    };
    let anchors = vec![false; schedule.indices.len()];
    denoise_stack(
        video_ds,
        mask_ds,
        &schedule.indices,
        &anchors,
        &settings,
        denoiser,
        sample,
        0,
        executor,
    )
}

/// Construct the keyframe stack, then densify by midpoints until every gap is at most `tau`.
#[allow(clippy::too_many_arguments)]
pub fn multiscale_gcg<D: Denoiser>(
    video_ds: &VideoTensor,
    mask_ds: &MaskVideo,
    initial: &[usize],
    settings: &GcgSettings,
    denoiser: &D,
    sample: &SampleSchedule,
    executor: &Executor,
) -> Result<GcgResult> {
    mask_ds.ensure_matches(video_ds)?;
    if initial.is_empty() {
        return Err(Error::Config("no initial keyframes".into()));
    }
    let frames = video_ds.frames();
    let mut keys = initial.to_vec();
    let gcg = denoise_stack(
        video_ds,
        mask_ds,
        &keys,
        &vec![false; keys.len()],
        settings,
        denoiser,
        sample,
        0,
        executor,
    )?;
    let mut history = vec![(keys.clone(), gcg.clone())];
    let mut gcg = gcg;
    let cap = round_cap(frames, settings.tau);
    let mut round = 0;
    while keys.len() >= 2 && max_index_gap(&keys)? > settings.tau {
        round += 1;
        if round > cap {
            return Err(Error::Internal(format!(
                "densification did not reach tau = {} within {cap} rounds",
                settings.tau
            )));
        }
        let mids = midpoints(&keys, settings.tau);
        let (guided, guided_mask) = insert_guidance(video_ds, mask_ds, &gcg, &keys)?;
        let mut next: Vec<usize> = keys.iter().chain(&mids).copied().collect();
        next.sort_unstable();
        let anchors: Vec<bool> = next.iter().map(|k| keys.binary_search(k).is_ok()).collect();
        gcg = denoise_stack(
            &guided,
            &guided_mask,
            &next,
            &anchors,
            settings,
            denoiser,
            sample,
            round,
            executor,
        )?;
        keys = next;
        history.push((keys.clone(), gcg.clone()));
    }
    Ok(GcgResult {
        frames: gcg,
        indices: keys,
        history,
    })
}
