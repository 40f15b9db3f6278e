//! Overlapping spatio-temporal tiles, Hann-weighted blending, and the per-step
//! tiled sampling loop.
//!
//! Each pass crops the global latent per tile, steps every tile once with the
//! denoiser, and blends the stepped tiles back into one latent. Blending runs
//! in `f64` over tiles sorted by position, so the result does not depend on
//! the order tiles finish in.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::denoiser::{Condition, DenoiseMode, Denoiser};
use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::sampler::{self, SampleSchedule};
use crate::video::{Extent, VideoTensor};

/// Floor added to every window weight.
pub const WEIGHT_FLOOR: f64 = 1e-3;

/// Half-open block `[f0,f1) x [y0,y1) x [x0,x1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Tile {
    pub f0: usize,
    pub f1: usize,
    pub y0: usize,
    pub y1: usize,
    pub x0: usize,
    pub x1: usize,
}

impl Tile {
    pub fn frames(&self) -> std::ops::Range<usize> {
        self.f0..self.f1
    }

    pub fn rows(&self) -> std::ops::Range<usize> {
        self.y0..self.y1
    }

    pub fn cols(&self) -> std::ops::Range<usize> {
        self.x0..self.x1
    }

    pub fn extent(&self) -> Extent {
        Extent::new(self.f1 - self.f0, self.y1 - self.y0, self.x1 - self.x0)
    }

    pub fn covering(extent: Extent) -> Tile {
        Tile {
            f0: 0,
            f1: extent.frames,
            y0: 0,
            y1: extent.height,
            x0: 0,
            x1: extent.width,
        }
    }

    fn within(&self, extent: Extent) -> bool {
        self.f0 < self.f1
            && self.y0 < self.y1
            && self.x0 < self.x1
            && self.f1 <= extent.frames
            && self.y1 <= extent.height
            && self.x1 <= extent.width
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightKind {
    Hann,
}

/// Tile sizes and overlaps as they appear in the pipeline config.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TilingConfig {
    pub temporal: usize,
    pub temporal_overlap: usize,
    pub spatial: usize,
    pub spatial_overlap: usize,
}

impl Default for TilingConfig {
    fn default() -> Self {
        Self {
            temporal: 49,
            temporal_overlap: 12,
            spatial: 96,
            spatial_overlap: 24,
        }
    }
}

impl TilingConfig {
    /// Temporal tiles only; every tile spans the full frame.
    pub fn temporal_plan(&self, extent: Extent) -> Result<TilePlan> {
        plan(
            extent,
            self.temporal,
            extent.height.max(1),
            extent.width.max(1),
            self.temporal_overlap,
            0,
            0,
        )
    }

    pub fn spatiotemporal_plan(&self, extent: Extent) -> Result<TilePlan> {
        plan(
            extent,
            self.temporal,
            self.spatial,
            self.spatial,
            self.temporal_overlap,
            self.spatial_overlap,
            self.spatial_overlap,
        )
    }
}

/// Tiles covering an extent plus the parameters that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TilePlan {
    pub extent: Extent,
    pub tiles: Vec<Tile>,
    pub size_t: usize,
    pub size_y: usize,
    pub size_x: usize,
    pub overlap_t: usize,
    pub overlap_y: usize,
    pub overlap_x: usize,
    pub weight_kind: WeightKind,
}

/// Tile starts along one axis: stride `size - overlap`, last tile flush with the end.
pub fn axis_ranges(extent: usize, size: usize, overlap: usize) -> Vec<(usize, usize)> {
    if extent <= size {
        return vec![(0, extent)];
    }
    let stride = size - overlap;
    let mut out = Vec::new();
    let mut s = 0;
    loop {
        if s + size >= extent {
            out.push((extent - size, extent));
            break;
        }
        out.push((s, s + size));
        s += stride;
    }
    out
}

pub fn plan(
    extent: Extent,
    size_t: usize,
    size_y: usize,
    size_x: usize,
    overlap_t: usize,
    overlap_y: usize,
    overlap_x: usize,
) -> Result<TilePlan> {
    for (axis, size, overlap) in [
        ("temporal", size_t, overlap_t),
        ("vertical", size_y, overlap_y),
        ("horizontal", size_x, overlap_x),
    ] {
        if size == 0 || overlap >= size {
            return Err(Error::Config(format!(
                "{axis} tile size {size} with overlap {overlap}: need 0 <= overlap < size"
            )));
        }
    }
    if extent.voxels() == 0 {
        return Err(Error::Shape("cannot tile an empty extent".into()));
    }
    let ts = axis_ranges(extent.frames, size_t, overlap_t);
    let ys = axis_ranges(extent.height, size_y, overlap_y);
    let xs = axis_ranges(extent.width, size_x, overlap_x);
    let mut tiles = Vec::with_capacity(ts.len() * ys.len() * xs.len());
    for &(f0, f1) in &ts {
        for &(y0, y1) in &ys {
            for &(x0, x1) in &xs {
                tiles.push(Tile {
                    f0,
                    f1,
                    y0,
                    y1,
                    x0,
                    x1,
                });
            }
        }
    }
    Ok(TilePlan {
        extent,
        tiles,
        size_t,
        size_y,
        size_x,
        overlap_t,
        overlap_y,
        overlap_x,
        weight_kind: WeightKind::Hann,
    })
}

/// Hann window of length `n` with floor, flattened to 1 on sides that touch the extent.
pub fn axis_weights(n: usize, touches_start: bool, touches_end: bool) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let twice = 2 * i + 1;
            if (touches_start && twice < n) || (touches_end && twice > n) {
                return 1.0;
            }
            let s = (PI * (i as f64 + 0.5) / n as f64).sin();
            WEIGHT_FLOOR + (1.0 - WEIGHT_FLOOR) * s * s
        })
        .collect()
}

/// Separable weights of one tile: `w(f, y, x) = t[f] * y[y] * x[x]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TileWeights {
    pub t: Vec<f64>,
    pub y: Vec<f64>,
    pub x: Vec<f64>,
}

impl TileWeights {
    pub fn at(&self, f: usize, y: usize, x: usize) -> f64 {
        self.t[f] * self.y[y] * self.x[x]
    }
}

pub fn tile_weight(tile: &Tile, plan: &TilePlan) -> TileWeights {
    let e = plan.extent;
    TileWeights {
        t: axis_weights(tile.f1 - tile.f0, tile.f0 == 0, tile.f1 == e.frames),
        y: axis_weights(tile.y1 - tile.y0, tile.y0 == 0, tile.y1 == e.height),
        x: axis_weights(tile.x1 - tile.x0, tile.x0 == 0, tile.x1 == e.width),
    }
}

/// Weighted average of tile outputs: `sum_i w_i x_i / sum_i w_i` per voxel.
pub fn blend(tile_outputs: &[(Tile, VideoTensor)], plan: &TilePlan) -> Result<VideoTensor> {
    blend_with(tile_outputs, plan, &Executor::sequential())
}

pub fn blend_with(
    tile_outputs: &[(Tile, VideoTensor)],
    plan: &TilePlan,
    executor: &Executor,
) -> Result<VideoTensor> {
    let mut order: Vec<usize> = (0..tile_outputs.len()).collect();
    order.sort_by_key(|&i| tile_outputs[i].0);
    let weights: Vec<TileWeights> = order
        .iter()
        .map(|&i| tile_weight(&tile_outputs[i].0, plan))
        .collect();
    let entries: Vec<(Tile, &TileWeights, &VideoTensor)> = order
        .iter()
        .zip(&weights)
        .map(|(&i, w)| (tile_outputs[i].0, w, &tile_outputs[i].1))
        .collect();
    accumulate(plan.extent, &entries, executor)
}

fn accumulate(
    extent: Extent,
    entries: &[(Tile, &TileWeights, &VideoTensor)],
    executor: &Executor,
) -> Result<VideoTensor> {
    let Some(first) = entries.first() else {
        return Err(Error::Coverage("no tiles to blend".into()));
    };
    let c = first.2.channels();
    for (tile, _, v) in entries {
        if !tile.within(extent) {
            return Err(Error::Bounds(format!("tile {tile:?} outside {extent:?}")));
        }
        let te = tile.extent();
        if v.frames() != te.frames
            || v.height() != te.height
            || v.width() != te.width
            || v.channels() != c
        {
            return Err(Error::Shape(format!(
                "tile {tile:?} output is {}x{}x{}x{}",
                v.frames(),
                v.height(),
                v.width(),
                v.channels()
            )));
        }
    }
    let (h, w) = (extent.height, extent.width);
    let frame_ids: Vec<usize> = (0..extent.frames).collect();
    let frames = executor.try_map(&frame_ids, |_, &f| {
        let mut num = vec![0.0f64; h * w * c];
        let mut den = vec![0.0f64; h * w];
        for (tile, wts, v) in entries {
            if f < tile.f0 || f >= tile.f1 {
                continue;
            }
            let lf = f - tile.f0;
            let wt = wts.t[lf];
            let src = v.frame(lf);
            let tw = tile.x1 - tile.x0;
            for ly in 0..tile.y1 - tile.y0 {
                let wty = wt * wts.y[ly];
                let gy = tile.y0 + ly;
                for lx in 0..tw {
                    let wgt = wty * wts.x[lx];
                    let p = gy * w + tile.x0 + lx;
                    den[p] += wgt;
                    let s = (ly * tw + lx) * c;
                    for ch in 0..c {
                        num[p * c + ch] += wgt * src[s + ch];
                    }
                }
            }
        }
        for (p, &d) in den.iter().enumerate() {
            if d <= 0.0 {
                return Err(Error::Coverage(format!(
                    "voxel ({f}, {}, {}) is not covered by any tile",
                    p / w,
                    p % w
                )));
            }
            for ch in 0..c {
                num[p * c + ch] /= d;
            }
        }
        Ok(num)
    })?;
    let data = frames.concat();
    VideoTensor::new(extent.frames, h, w, c, data)
}

/// Tiled sampler bound to one condition: each tile's denoiser context is
/// prepared once and reused for every step.
pub struct TiledSampler<'a, D: Denoiser> {
    denoiser: &'a D,
    extent: Extent,
    /// Plan tiles in sorted order; `weights` and `contexts` follow it.
    tiles: Vec<Tile>,
    weights: Vec<TileWeights>,
    contexts: Vec<D::Context>,
    executor: Executor,
}

impl<'a, D: Denoiser> TiledSampler<'a, D> {
    pub fn new(
        denoiser: &'a D,
        condition: &Condition,
        plan: &TilePlan,
        mode: DenoiseMode,
        executor: Executor,
    ) -> Result<Self> {
        let v = condition.video();
        if v.extent() != plan.extent {
            return Err(Error::Shape(format!(
                "condition {:?} does not match plan {:?}",
                v.extent(),
                plan.extent
            )));
        }
        let mut tiles = plan.tiles.clone();
        tiles.sort();
        let contexts = executor.try_map(&tiles, |_, tile| {
            let sub = condition.crop(tile.frames(), tile.rows(), tile.cols())?;
            denoiser.prepare(&sub, mode)
        })?;
        let weights = tiles.iter().map(|t| tile_weight(t, plan)).collect();
        Ok(Self {
            denoiser,
            extent: plan.extent,
            tiles,
            weights,
            contexts,
            executor,
        })
    }

    fn merge(&self, outputs: &[VideoTensor]) -> Result<VideoTensor> {
        let entries: Vec<(Tile, &TileWeights, &VideoTensor)> = self
            .tiles
            .iter()
            .zip(&self.weights)
            .zip(outputs)
            .map(|((t, w), v)| (*t, w, v))
            .collect();
        accumulate(self.extent, &entries, &self.executor)
    }

    /// Per-tile stepped latents for one diffusion step, in sorted tile order.
    fn step_tiles(&self, z: &VideoTensor, t_from: f64, t_to: f64) -> Result<Vec<VideoTensor>> {
        self.executor.try_map(&self.tiles, |i, tile| {
            let mut zt = z.crop(tile.frames(), tile.rows(), tile.cols())?;
            let v = self.denoiser.velocity(&self.contexts[i], &zt, t_from)?;
            sampler::step_in_place(zt.data_mut(), v.data(), t_from, t_to);
            Ok(zt)
        })
    }

    /// One blended diffusion step from `t_from` to `t_to`.
    pub fn step(&self, z: &VideoTensor, t_from: f64, t_to: f64) -> Result<VideoTensor> {
        if t_to >= t_from {
            return Err(Error::Schedule(format!(
                "step must descend, got {t_from} -> {t_to}"
            )));
        }
        if z.extent() != self.extent {
            return Err(Error::Shape("latent does not match plan extent".into()));
        }
        let stepped = self.step_tiles(z, t_from, t_to)?;
        self.merge(&stepped)
    }

    /// Descend from noise level `level` to 0 with blending after every step.
    pub fn descend(
        &self,
        mut z: VideoTensor,
        schedule: &SampleSchedule,
        level: usize,
    ) -> Result<VideoTensor> {
        for (_, t_from, t_to) in schedule.descent_from(level) {
            z = self.step(&z, t_from, t_to)?;
        }
        Ok(z)
    }

    /// Baseline: every tile descends on its own and tiles are merged once at the end.
    pub fn descend_merge_once(
        &self,
        z: &VideoTensor,
        schedule: &SampleSchedule,
        level: usize,
    ) -> Result<VideoTensor> {
        let finished = self.executor.try_map(&self.tiles, |i, tile| {
            let mut zt = z.crop(tile.frames(), tile.rows(), tile.cols())?;
            for (_, t_from, t_to) in schedule.descent_from(level) {
                let v = self.denoiser.velocity(&self.contexts[i], &zt, t_from)?;
                sampler::step_in_place(zt.data_mut(), v.data(), t_from, t_to);
            }
            Ok(zt)
        })?;
        self.merge(&finished)
    }
}

/// One tiled diffusion step without context reuse.
#[allow(clippy::too_many_arguments)]
pub fn tiled_denoise_pass<D: Denoiser>(
    z: &VideoTensor,
    condition: &Condition,
    plan: &TilePlan,
    denoiser: &D,
    t_from: f64,
    t_to: f64,
    mode: DenoiseMode,
    executor: &Executor,
) -> Result<VideoTensor> {
    TiledSampler::new(denoiser, condition, plan, mode, executor.clone())?.step(z, t_from, t_to)
}
