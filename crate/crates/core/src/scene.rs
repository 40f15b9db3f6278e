//! Procedural scenes with exact ground truth for any crop of any frame.
//!
//! The background is multi-octave value noise on an integer lattice, hashed
//! with 64-bit integer arithmetic and interpolated bilinearly, so renders are
//! bit-identical across runs and platforms. Sprites are composited with hard
//! alpha in list order.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::hash_words;
use crate::video::{PadSpec, VideoTensor};

/// Peak amplitude of the background texture.
const TEXTURE_AMPLITUDE: f64 = 0.7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TextureSpec {
    pub octaves: u32,
    /// Lattice frequency of the coarsest octave, in cycles per pixel.
    pub base_frequency: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Disc,
    Rect,
    /// Right-pointing arrow: a shaft plus a triangular head.
    Arrow,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Trajectory {
    pub x0: f64,
    pub y0: f64,
    pub vx: f64,
    pub vy: f64,
}

impl Trajectory {
    pub fn at(&self, frame: usize) -> (f64, f64) {
        let f = frame as f64;
        (self.x0 + self.vx * f, self.y0 + self.vy * f)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sprite {
    pub shape: Shape,
    pub size: f64,
    pub color: [f64; 3],
    pub trajectory: Trajectory,
    #[serde(default)]
    pub visible_from: usize,
    /// Last visible frame, inclusive.
    #[serde(default = "forever")]
    pub visible_until: usize,
}

fn forever() -> usize {
    usize::MAX
}

impl Sprite {
    pub fn visible(&self, frame: usize) -> bool {
        self.visible_from <= frame && frame <= self.visible_until
    }

    /// Hard-alpha coverage of the pixel centred at world `(wx, wy)`.
    pub fn covers(&self, frame: usize, wx: f64, wy: f64) -> bool {
        let (cx, cy) = self.trajectory.at(frame);
        let (dx, dy) = (wx - cx, wy - cy);
        let h = self.size * 0.5;
        match self.shape {
            Shape::Disc => dx * dx + dy * dy <= h * h,
            Shape::Rect => dx.abs() <= h && dy.abs() <= h * 0.6,
            Shape::Arrow => {
                if (-h..0.0).contains(&dx) {
                    dy.abs() <= self.size * 0.15
                } else if (0.0..=h).contains(&dx) {
                    dy.abs() <= (h - dx) * 0.8
                } else {
                    false
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraKey {
    pub frame: usize,
    pub cx: f64,
    pub cy: f64,
}

/// Procedural world description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub seed: u64,
    pub world_extent: usize,
    pub texture: TextureSpec,
    #[serde(default)]
    pub sprites: Vec<Sprite>,
    #[serde(default)]
    pub camera: Vec<CameraKey>,
}

/// Axis-aligned pixel rectangle in world coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rect {
    pub x: i64,
    pub y: i64,
    pub width: usize,
    pub height: usize,
}

impl Rect {
    pub fn new(x: i64, y: i64, width: usize, height: usize) -> Self {
        Self {
            x,
            y,
            width,
            height,
        }
    }

    pub fn translate(&self, dx: i64, dy: i64) -> Rect {
        Rect {
            x: self.x + dx,
            y: self.y + dy,
            ..*self
        }
    }

    pub fn contains(&self, other: &Rect) -> bool {
        other.x >= self.x
            && other.y >= self.y
            && other.x + other.width as i64 <= self.x + self.width as i64
            && other.y + other.height as i64 <= self.y + self.height as i64
    }

    pub fn intersect(&self, other: &Rect) -> Option<Rect> {
        let x0 = self.x.max(other.x);
        let y0 = self.y.max(other.y);
        let x1 = (self.x + self.width as i64).min(other.x + other.width as i64);
        let y1 = (self.y + self.height as i64).min(other.y + other.height as i64);
        (x1 > x0 && y1 > y0).then(|| Rect::new(x0, y0, (x1 - x0) as usize, (y1 - y0) as usize))
    }
}

/// Lattice value in `[-1, 1)` from integer inputs only.
fn lattice(seed: u64, octave: u32, channel: usize, ix: i64, iy: i64) -> f64 {
    let h = hash_words(&[seed, octave as u64, channel as u64, ix as u64, iy as u64]);
    (h >> 11) as f64 / (1u64 << 52) as f64 - 1.0
}

impl TextureSpec {
    /// Lattice spacing of octave `o` in pixels, at least 1.
    pub fn cell(&self, octave: u32) -> i64 {
        let f = self.base_frequency * (1u64 << octave.min(30)) as f64;
        if f <= 0.0 {
            return 1 << 20;
        }
        ((1.0 / f).round() as i64).max(1)
    }

    /// Background value at integer world pixel `(wx, wy)` for one channel.
    pub fn sample(&self, seed: u64, channel: usize, wx: i64, wy: i64) -> f64 {
        let mut acc = 0.0;
        let mut norm = 0.0;
        let mut amp = 1.0;
        for o in 0..self.octaves.max(1) {
            let cell = self.cell(o);
            let (ix, rx) = (wx.div_euclid(cell), wx.rem_euclid(cell));
            let (iy, ry) = (wy.div_euclid(cell), wy.rem_euclid(cell));
            let fx = rx as f64 / cell as f64;
            let fy = ry as f64 / cell as f64;
            let v00 = lattice(seed, o, channel, ix, iy);
            let v10 = lattice(seed, o, channel, ix + 1, iy);
            let v01 = lattice(seed, o, channel, ix, iy + 1);
            let v11 = lattice(seed, o, channel, ix + 1, iy + 1);
            let top = v00 + (v10 - v00) * fx;
            let bottom = v01 + (v11 - v01) * fx;
            acc += amp * (top + (bottom - top) * fy);
            norm += amp;
            amp *= 0.5;
        }
        TEXTURE_AMPLITUDE * acc / norm
    }
}

impl SceneSpec {
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self, frames: usize) -> Result<()> {
        if self.world_extent == 0 {
            return Err(Error::Config("world_extent must be positive".into()));
        }
        if !(self.texture.base_frequency > 0.0) {
            return Err(Error::Config(
                "texture.base_frequency must be positive".into(),
            ));
        }
        let limit = self.world_extent as f64;
        for (i, s) in self.sprites.iter().enumerate() {
            if !(s.size > 0.0) || s.color.iter().any(|c| !(-1.0..=1.0).contains(c)) {
                return Err(Error::Config(format!(
                    "sprite {i}: size must be positive and colors within [-1, 1]"
                )));
            }
            if frames == 0 || s.visible_from >= frames {
                continue;
            }
            let last = s.visible_until.min(frames - 1);
            for f in [s.visible_from, last] {
                let (x, y) = s.trajectory.at(f);
                if !(0.0..=limit).contains(&x) || !(0.0..=limit).contains(&y) {
                    return Err(Error::Geometry(format!(
                        "sprite {i} leaves the world at frame {f}"
                    )));
                }
            }
        }
        let mut prev = None;
        for k in &self.camera {
            if prev.is_some_and(|p| k.frame <= p) {
                return Err(Error::Config(
                    "camera keys must have increasing frames".into(),
                ));
            }
            prev = Some(k.frame);
        }
        Ok(())
    }

    /// Piecewise-linear camera centre, held constant before the first and after the last key.
    pub fn camera_at(&self, frame: usize) -> (f64, f64) {
        let keys = &self.camera;
        let Some(first) = keys.first() else {
            let c = self.world_extent as f64 * 0.5;
            return (c, c);
        };
        if frame <= first.frame {
            return (first.cx, first.cy);
        }
        for pair in keys.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            if frame <= b.frame {
                let u = (frame - a.frame) as f64 / (b.frame - a.frame) as f64;
                return (a.cx + (b.cx - a.cx) * u, a.cy + (b.cy - a.cy) * u);
            }
        }
        let last = keys[keys.len() - 1];
        (last.cx, last.cy)
    }

    /// Camera displacement relative to frame 0, rounded to whole pixels `(dx, dy)`.
    pub fn camera_shift(&self, frame: usize) -> (i64, i64) {
        let (x0, y0) = self.camera_at(0);
        let (x, y) = self.camera_at(frame);
        ((x - x0).round() as i64, (y - y0).round() as i64)
    }

    fn pixel(&self, frame: usize, wx: i64, wy: i64, out: &mut [f64]) {
        let (fx, fy) = (wx as f64, wy as f64);
        for s in self.sprites.iter().rev() {
            if s.visible(frame) && s.covers(frame, fx, fy) {
                out.copy_from_slice(&s.color);
                return;
            }
        }
        for (c, o) in out.iter_mut().enumerate() {
            *o = self.texture.sample(self.seed, c, wx, wy);
        }
    }
}

/// Render one frame of `window` into an `h x w` RGB frame (nearest sampling when sizes differ).
pub fn render(
    spec: &SceneSpec,
    frame: usize,
    window: Rect,
    h: usize,
    w: usize,
) -> Result<VideoTensor> {
    if h == 0 || w == 0 || window.width == 0 || window.height == 0 {
        return Err(Error::Shape("cannot render an empty window".into()));
    }
    let mut data = vec![0.0; h * w * 3];
    for py in 0..h {
        let wy = window.y + (py * window.height / h) as i64;
        for px in 0..w {
            let wx = window.x + (px * window.width / w) as i64;
            let i = (py * w + px) * 3;
            spec.pixel(frame, wx, wy, &mut data[i..i + 3]);
        }
    }
    VideoTensor::new(1, h, w, 3, data)
}

/// Render frames `0..frames` of a window that may move from frame to frame.
pub fn render_track(spec: &SceneSpec, windows: &[Rect]) -> Result<VideoTensor> {
    let first = windows
        .first()
        .ok_or_else(|| Error::Shape("no frames to render".into()))?;
    let (h, w) = (first.height, first.width);
    let mut data = Vec::with_capacity(windows.len() * h * w * 3);
    for (f, win) in windows.iter().enumerate() {
        data.extend_from_slice(render(spec, f, *win, h, w)?.data());
    }
    VideoTensor::new(windows.len(), h, w, 3, data)
}

/// How the ground-truth canvas relates to the camera.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Canvas {
    /// Crop and canvas both move with the camera; the crop sits at a fixed offset.
    Follow,
    /// The canvas is fixed in the world and the crop moves across it with the camera.
    WorldFixed,
}

/// Two frames showing the same world region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RevisitPair {
    pub first: usize,
    pub second: usize,
    pub region: Rect,
}

/// Where the crop and the canvas sit in the world at every frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseGeometry {
    pub frames: usize,
    pub crop: Rect,
    pub full: Rect,
    pub canvas: Canvas,
    /// Camera displacement `(dx, dy)` per frame relative to frame 0.
    pub shifts: Vec<(i64, i64)>,
    #[serde(default)]
    pub revisits: Vec<RevisitPair>,
}

impl CaseGeometry {
    pub fn new(
        spec: &SceneSpec,
        frames: usize,
        crop: Rect,
        full: Rect,
        canvas: Canvas,
    ) -> Result<Self> {
        if frames == 0 {
            return Err(Error::Config("case needs at least one frame".into()));
        }
        let shifts: Vec<(i64, i64)> = (0..frames).map(|f| spec.camera_shift(f)).collect();
        let g = Self {
            frames,
            crop,
            full,
            canvas,
            shifts,
            revisits: Vec::new(),
        };
        for f in 0..frames {
            if !g.full_at(f).contains(&g.crop_at(f)) {
                return Err(Error::Geometry(format!(
                    "crop {:?} leaves the canvas {:?} at frame {f}",
                    g.crop_at(f),
                    g.full_at(f)
                )));
            }
        }
        Ok(g)
    }

    pub fn crop_at(&self, f: usize) -> Rect {
        let (dx, dy) = self.shifts[f];
        self.crop.translate(dx, dy)
    }

    pub fn full_at(&self, f: usize) -> Rect {
        match self.canvas {
            Canvas::Follow => {
                let (dx, dy) = self.shifts[f];
                self.full.translate(dx, dy)
            }
            Canvas::WorldFixed => self.full,
        }
    }

    /// Offset `(y, x)` of the crop inside the canvas at frame `f`.
    pub fn placement(&self, f: usize) -> (usize, usize) {
        let c = self.crop_at(f);
        let g = self.full_at(f);
        ((c.y - g.y) as usize, (c.x - g.x) as usize)
    }

    pub fn pad_spec(&self) -> PadSpec {
        let track: Vec<[usize; 2]> = (0..self.frames)
            .map(|f| {
                let (y, x) = self.placement(f);
                [y, x]
            })
            .collect();
        let [oy, ox] = track[0];
        let moving = track.iter().any(|&p| p != track[0]);
        PadSpec {
            target_height: self.full.height,
            target_width: self.full.width,
            offset_y: oy,
            offset_x: ox,
            track: moving.then_some(track),
        }
    }

    /// A world rectangle expressed in canvas pixels at frame `f`, if it lies inside.
    pub fn to_canvas(&self, f: usize, region: Rect) -> Option<(usize, usize, usize, usize)> {
        let g = self.full_at(f);
        if !g.contains(&region) {
            return None;
        }
        let y0 = (region.y - g.y) as usize;
        let x0 = (region.x - g.x) as usize;
        Some((y0, y0 + region.height, x0, x0 + region.width))
    }
}

/// Input crop, ground-truth canvas and the geometry tying them together.
#[derive(Debug, Clone)]
pub struct Case {
    pub input: VideoTensor,
    pub ground_truth: VideoTensor,
    pub geometry: CaseGeometry,
}

pub fn make_case(spec: &SceneSpec, frames: usize, crop: Rect, full: Rect) -> Result<Case> {
    make_case_with(spec, frames, crop, full, Canvas::Follow)
}

pub fn make_case_with(
    spec: &SceneSpec,
    frames: usize,
    crop: Rect,
    full: Rect,
    canvas: Canvas,
) -> Result<Case> {
    if !full.contains(&crop) {
        return Err(Error::Geometry(format!(
            "crop {crop:?} is not inside {full:?}"
        )));
    }
    spec.validate(frames)?;
    let geometry = CaseGeometry::new(spec, frames, crop, full, canvas)?;
    let crops: Vec<Rect> = (0..frames).map(|f| geometry.crop_at(f)).collect();
    let fulls: Vec<Rect> = (0..frames).map(|f| geometry.full_at(f)).collect();
    Ok(Case {
        input: render_track(spec, &crops)?,
        ground_truth: render_track(spec, &fulls)?,
        geometry,
    })
}

/// Named scene recipes used by the CLI, the benches and the tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// A static arrow outside the crop is glimpsed only from frame 40 to 43.
    LateReveal,
    /// The crop sweeps across the canvas and back, revisiting the same world region.
    Revisit,
    /// Static camera over a textured background with drifting discs.
    Textured,
    /// Slow constant pan across the canvas.
    Pan,
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "late-reveal" => Ok(Preset::LateReveal),
            "revisit" => Ok(Preset::Revisit),
            "textured" => Ok(Preset::Textured),
            "pan" => Ok(Preset::Pan),
            other => Err(Error::Config(format!("unknown preset `{other}`"))),
        }
    }
}

impl Preset {
    pub const ALL: [Preset; 4] = [
        Preset::LateReveal,
        Preset::Revisit,
        Preset::Textured,
        Preset::Pan,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Preset::LateReveal => "late-reveal",
            Preset::Revisit => "revisit",
            Preset::Textured => "textured",
            Preset::Pan => "pan",
        }
    }
}

/// A preset instantiated for a seed and size.
#[derive(Debug, Clone)]
pub struct PresetCase {
    pub spec: SceneSpec,
    pub frames: usize,
    pub crop: Rect,
    pub full: Rect,
    pub canvas: Canvas,
}

impl PresetCase {
    pub fn make(&self) -> Result<Case> {
        let mut case = make_case_with(&self.spec, self.frames, self.crop, self.full, self.canvas)?;
        case.geometry.revisits = revisit_pairs(&self.spec, &case.geometry);
        Ok(case)
    }
}

/// Frame pairs `(f, F-1-f)` over the part of the canvas that is outside the crop
/// at both frames and renders identically at both.
pub fn revisit_pairs(spec: &SceneSpec, geometry: &CaseGeometry) -> Vec<RevisitPair> {
    let n = geometry.frames;
    let mut out = Vec::new();
    if geometry.canvas != Canvas::WorldFixed || n < 4 {
        return out;
    }
    let g = geometry.full;
    for f in 0..n / 4 {
        let second = n - 1 - f;
        // columns of the canvas left uncovered by the crop at both frames
        let (a, b) = (geometry.crop_at(f), geometry.crop_at(second));
        let right_edge = (a.x + a.width as i64).max(b.x + b.width as i64);
        let region = Rect::new(
            right_edge,
            g.y,
            (g.x + g.width as i64 - right_edge).max(0) as usize,
            g.height,
        );
        if region.width == 0 {
            continue;
        }
        let (Ok(r1), Ok(r2)) = (
            render(spec, f, region, region.height, region.width),
            render(spec, second, region, region.height, region.width),
        ) else {
            continue;
        };
        if r1 == r2 {
            out.push(RevisitPair {
                first: f,
                second,
                region,
            });
        }
    }
    out
}

fn texture_for(seed: u64) -> TextureSpec {
    TextureSpec {
        octaves: 3,
        base_frequency: 1.0 / (12.0 + (seed % 5) as f64),
    }
}

/// Build a preset case. `size` is the canvas side in pixels; the crop keeps
/// the full height and the left half of the canvas width.
pub fn preset(kind: Preset, seed: u64, frames: usize, size: usize) -> Result<PresetCase> {
    if size < 8 || frames == 0 {
        return Err(Error::Config(
            "preset needs size >= 8 and at least one frame".into(),
        ));
    }
    let world = 4 * size.max(64);
    let origin = (world / 2 - size / 2) as i64;
    let s = size as f64;
    let full = Rect::new(origin, origin, size, size);
    let half = size / 2;
    let crop = Rect::new(origin, origin, half, size);
    let centre = origin as f64 + s * 0.5;
    let key = |frame: usize, dx: f64| CameraKey {
        frame,
        cx: centre + dx,
        cy: centre,
    };
    let jitter = |k: u64| (hash_words(&[seed, k]) >> 11) as f64 / (1u64 << 53) as f64;
    let disc = |k: u64, y: f64, vx: f64| Sprite {
        shape: Shape::Disc,
        size: s * (0.15 + 0.1 * jitter(k)),
        color: [0.8 - jitter(k + 1), -0.6, 0.2 + 0.5 * jitter(k + 2)],
        trajectory: Trajectory {
            x0: origin as f64 + s * (0.1 + 0.25 * jitter(k + 3)),
            y0: origin as f64 + y,
            vx,
            vy: 0.0,
        },
        visible_from: 0,
        visible_until: usize::MAX,
    };
    let (sprites, camera, canvas) = match kind {
        Preset::LateReveal => {
            let arrow = Sprite {
                shape: Shape::Arrow,
                size: s * 0.375,
                color: [0.95, 0.85, -0.9],
                trajectory: Trajectory {
                    x0: origin as f64 + s * (0.72 + 0.06 * jitter(7)),
                    y0: origin as f64 + s * (0.3 + 0.4 * jitter(8)),
                    vx: 0.0,
                    vy: 0.0,
                },
                visible_from: 0,
                visible_until: usize::MAX,
            };
            let pan = (size - half) as f64;
            let camera = vec![
                key(0, 0.0),
                key(39, 0.0),
                key(40, pan),
                key(43, pan),
                key(44, 0.0),
            ];
            (
                vec![disc(20, s * 0.5, 0.0), arrow],
                camera,
                Canvas::WorldFixed,
            )
        }
        Preset::Revisit => {
            let pan = (size - half) as f64;
            let mid = frames / 2;
            let camera = vec![
                key(0, 0.0),
                key(mid.max(1), pan),
                key((2 * mid).max(2), 0.0),
            ];
            let rect = Sprite {
                shape: Shape::Rect,
                size: s * 0.3,
                color: [-0.8, 0.7, 0.9],
                trajectory: Trajectory {
                    x0: origin as f64 + s * (0.7 + 0.1 * jitter(30)),
                    y0: origin as f64 + s * (0.25 + 0.5 * jitter(31)),
                    vx: 0.0,
                    vy: 0.0,
                },
                visible_from: 0,
                visible_until: usize::MAX,
            };
            (vec![rect], camera, Canvas::WorldFixed)
        }
        Preset::Textured => {
            let sprites = vec![disc(40, s * 0.3, 0.08), disc(50, s * 0.7, 0.05)];
            (sprites, vec![key(0, 0.0)], Canvas::WorldFixed)
        }
        Preset::Pan => {
            let pan = (size - half) as f64;
            let camera = vec![key(0, 0.0), key(frames.saturating_sub(1).max(1), pan)];
            (vec![disc(60, s * 0.5, 0.02)], camera, Canvas::WorldFixed)
        }
    };
    let spec = SceneSpec {
        seed,
        world_extent: world,
        texture: texture_for(seed),
        sprites,
        camera,
    };
    spec.validate(frames)?;
    Ok(PresetCase {
        spec,
        frames,
        crop,
        full,
        canvas,
    })
}
