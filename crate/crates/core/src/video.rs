//! Dense frame stacks, binary masks, padding and resampling.
//!
//! Every tensor is stored frame-major, row-major within a frame, with channels
//! interleaved. Values are nominally in `[-1, 1]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Spatio-temporal size of a tensor, ignoring channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Extent {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
}

impl Extent {
    pub fn new(frames: usize, height: usize, width: usize) -> Self {
        Self {
            frames,
            height,
            width,
        }
    }

    pub fn voxels(&self) -> usize {
        self.frames * self.height * self.width
    }
}

/// A stack of `F` frames of `H x W` pixels with `C` channels.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoTensor {
    frames: usize,
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl VideoTensor {
    pub fn new(
        frames: usize,
        height: usize,
        width: usize,
        channels: usize,
        data: Vec<f64>,
    ) -> Result<Self> {
        if frames == 0 || height == 0 || width == 0 {
            return Err(Error::Shape(format!(
                "empty tensor {frames}x{height}x{width}"
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::Shape(format!(
                "unsupported channel count {channels}"
            )));
        }
        let expected = frames * height * width * channels;
        if data.len() != expected {
            return Err(Error::Shape(format!(
                "data length {} does not match {frames}x{height}x{width}x{channels}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Value(format!("non-finite value at element {pos}")));
        }
        Ok(Self {
            frames,
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(frames: usize, height: usize, width: usize, channels: usize, value: f64) -> Self {
        Self::new(
            frames,
            height,
            width,
            channels,
            vec![value; frames * height * width * channels],
        )
        .expect("filled tensor has valid shape")
    }

    pub fn zeros(frames: usize, height: usize, width: usize, channels: usize) -> Self {
        Self::filled(frames, height, width, channels, 0.0)
    }

    pub fn zeros_like(other: &VideoTensor) -> Self {
        Self::zeros(other.frames, other.height, other.width, other.channels)
    }

    /// Build a tensor by evaluating `f(frame, y, x, channel)` at every element.
    pub fn from_fn(
        frames: usize,
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(frames * height * width * channels);
        for fi in 0..frames {
            for y in 0..height {
                for x in 0..width {
                    for c in 0..channels {
                        data.push(f(fi, y, x, c));
                    }
                }
            }
        }
        Self::new(frames, height, width, channels, data)
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn extent(&self) -> Extent {
        Extent::new(self.frames, self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Mutable access to the raw buffer. Callers must keep values finite.
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn frame_len(&self) -> usize {
        self.height * self.width * self.channels
    }

    #[inline]
    pub fn index(&self, f: usize, y: usize, x: usize, c: usize) -> usize {
        ((f * self.height + y) * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn at(&self, f: usize, y: usize, x: usize, c: usize) -> f64 {
        self.data[self.index(f, y, x, c)]
    }

    #[inline]
    pub fn set(&mut self, f: usize, y: usize, x: usize, c: usize, v: f64) {
        let i = self.index(f, y, x, c);
        self.data[i] = v;
    }

    pub fn frame(&self, f: usize) -> &[f64] {
        let n = self.frame_len();
        &self.data[f * n..(f + 1) * n]
    }

    pub fn frame_mut(&mut self, f: usize) -> &mut [f64] {
        let n = self.frame_len();
        &mut self.data[f * n..(f + 1) * n]
    }

    pub fn same_shape(&self, other: &VideoTensor) -> bool {
        self.frames == other.frames
            && self.height == other.height
            && self.width == other.width
            && self.channels == other.channels
    }

    pub fn ensure_same_shape(&self, other: &VideoTensor, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "{what}: {}x{}x{}x{} vs {}x{}x{}x{}",
                self.frames,
                self.height,
                self.width,
                self.channels,
                other.frames,
                other.height,
                other.width,
                other.channels
            )))
        }
    }

    /// Copy out the sub-block `[f0,f1) x [y0,y1) x [x0,x1)`.
    pub fn crop(
        &self,
        frames: std::ops::Range<usize>,
        rows: std::ops::Range<usize>,
        cols: std::ops::Range<usize>,
    ) -> Result<VideoTensor> {
        if frames.end > self.frames
            || rows.end > self.height
            || cols.end > self.width
            || frames.is_empty()
            || rows.is_empty()
            || cols.is_empty()
        {
            return Err(Error::Bounds(format!(
                "crop {frames:?}x{rows:?}x{cols:?} outside {}x{}x{}",
                self.frames, self.height, self.width
            )));
        }
        let c = self.channels;
        let row_len = cols.len() * c;
        let mut data = Vec::with_capacity(frames.len() * rows.len() * row_len);
        for f in frames.clone() {
            for y in rows.clone() {
                let start = self.index(f, y, cols.start, 0);
                data.extend_from_slice(&self.data[start..start + row_len]);
            }
        }
        Ok(VideoTensor {
            frames: frames.len(),
            height: rows.len(),
            width: cols.len(),
            channels: c,
            data,
        })
    }

    /// Overwrite the block starting at `(f0, y0, x0)` with `src`.
    pub fn paste(&mut self, src: &VideoTensor, f0: usize, y0: usize, x0: usize) -> Result<()> {
        if src.channels != self.channels
            || f0 + src.frames > self.frames
            || y0 + src.height > self.height
            || x0 + src.width > self.width
        {
            return Err(Error::Bounds(format!(
                "paste of {}x{}x{} at ({f0},{y0},{x0}) into {}x{}x{}",
                src.frames, src.height, src.width, self.frames, self.height, self.width
            )));
        }
        let row_len = src.width * src.channels;
        for f in 0..src.frames {
            for y in 0..src.height {
                let dst = self.index(f0 + f, y0 + y, x0, 0);
                let s = src.index(f, y, 0, 0);
                self.data[dst..dst + row_len].copy_from_slice(&src.data[s..s + row_len]);
            }
        }
        Ok(())
    }

    /// Gather the listed frames, in order, into a new tensor.
    pub fn select_frames(&self, indices: &[usize]) -> Result<VideoTensor> {
        if indices.is_empty() {
            return Err(Error::Shape("cannot select zero frames".into()));
        }
        let mut data = Vec::with_capacity(indices.len() * self.frame_len());
        for &i in indices {
            if i >= self.frames {
                return Err(Error::Bounds(format!(
                    "frame {i} of {}-frame tensor",
                    self.frames
                )));
            }
            data.extend_from_slice(self.frame(i));
        }
        Ok(VideoTensor {
            frames: indices.len(),
            height: self.height,
            width: self.width,
            channels: self.channels,
            data,
        })
    }

    /// Elementwise combination of two equally shaped tensors.
    pub fn zip_map(&self, other: &VideoTensor, f: impl Fn(f64, f64) -> f64) -> Result<VideoTensor> {
        self.ensure_same_shape(other, "zip_map")?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        VideoTensor::new(self.frames, self.height, self.width, self.channels, data)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<VideoTensor> {
        let data = self.data.iter().map(|&a| f(a)).collect();
        VideoTensor::new(self.frames, self.height, self.width, self.channels, data)
    }

    pub fn max_abs_diff(&self, other: &VideoTensor) -> f64 {
        assert!(self.same_shape(other), "max_abs_diff on mismatched shapes");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Mean over channels, producing a single-channel tensor.
    pub fn to_gray(&self) -> VideoTensor {
        if self.channels == 1 {
            return self.clone();
        }
        let c = self.channels as f64;
        let data = self
            .data
            .chunks_exact(self.channels)
            .map(|px| px.iter().sum::<f64>() / c)
            .collect();
        VideoTensor {
            frames: self.frames,
            height: self.height,
            width: self.width,
            channels: 1,
            data,
        }
    }
}

/// Per-frame, per-pixel binary map: 1 marks a region to generate, 0 an observed pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskVideo(VideoTensor);

impl MaskVideo {
    pub fn new(frames: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if let Some(pos) = data.iter().position(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::Value(format!(
                "mask element {pos} is {}, expected 0 or 1",
                data[pos]
            )));
        }
        Ok(Self(VideoTensor::new(frames, height, width, 1, data)?))
    }

    pub fn from_tensor(t: VideoTensor) -> Result<Self> {
        if t.channels != 1 {
            return Err(Error::Shape(format!(
                "mask must have one channel, got {}",
                t.channels
            )));
        }
        let (f, h, w) = (t.frames, t.height, t.width);
        Self::new(f, h, w, t.data)
    }

    pub fn zeros(frames: usize, height: usize, width: usize) -> Self {
        Self(VideoTensor::zeros(frames, height, width, 1))
    }

    pub fn ones(frames: usize, height: usize, width: usize) -> Self {
        Self(VideoTensor::filled(frames, height, width, 1, 1.0))
    }

    pub fn from_fn(
        frames: usize,
        height: usize,
        width: usize,
        mut generate: impl FnMut(usize, usize, usize) -> bool,
    ) -> Self {
        let t = VideoTensor::from_fn(frames, height, width, 1, |f, y, x, _| {
            if generate(f, y, x) {
                1.0
            } else {
                0.0
            }
        })
        .expect("mask shape valid");
        Self(t)
    }

    pub fn as_tensor(&self) -> &VideoTensor {
        &self.0
    }

    pub fn into_tensor(self) -> VideoTensor {
        self.0
    }

    pub fn frames(&self) -> usize {
        self.0.frames
    }

    pub fn height(&self) -> usize {
        self.0.height
    }

    pub fn width(&self) -> usize {
        self.0.width
    }

    pub fn extent(&self) -> Extent {
        self.0.extent()
    }

    pub fn data(&self) -> &[f64] {
        &self.0.data
    }

    /// True where the pixel must be generated.
    #[inline]
    pub fn is_generate(&self, f: usize, y: usize, x: usize) -> bool {
        self.0.at(f, y, x, 0) != 0.0
    }

    pub fn set(&mut self, f: usize, y: usize, x: usize, generate: bool) {
        self.0.set(f, y, x, 0, if generate { 1.0 } else { 0.0 });
    }

    /// Whole frame marked as 1 (an anchor/guidance frame by convention).
    pub fn frame_all_ones(&self, f: usize) -> bool {
        self.0.frame(f).iter().all(|&v| v == 1.0)
    }

    pub fn set_frame(&mut self, f: usize, generate: bool) {
        let v = if generate { 1.0 } else { 0.0 };
        self.0.frame_mut(f).fill(v);
    }

    pub fn count_generate(&self) -> usize {
        self.0.data.iter().filter(|&&v| v != 0.0).count()
    }

    pub fn crop(
        &self,
        frames: std::ops::Range<usize>,
        rows: std::ops::Range<usize>,
        cols: std::ops::Range<usize>,
    ) -> Result<MaskVideo> {
        Ok(Self(self.0.crop(frames, rows, cols)?))
    }

    pub fn select_frames(&self, indices: &[usize]) -> Result<MaskVideo> {
        Ok(Self(self.0.select_frames(indices)?))
    }

    pub fn ensure_matches(&self, video: &VideoTensor) -> Result<()> {
        if self.frames() == video.frames
            && self.height() == video.height
            && self.width() == video.width
        {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "mask {}x{}x{} does not match video {}x{}x{}",
                self.frames(),
                self.height(),
                self.width(),
                video.frames,
                video.height,
                video.width
            )))
        }
    }
}

/// Placement of an input video inside a larger canvas.
///
/// `offset_y`/`offset_x` place every frame; an optional `track` gives one
/// `[offset_y, offset_x]` pair per frame instead (a crop that moves over a
/// world-fixed canvas).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PadSpec {
    pub target_height: usize,
    pub target_width: usize,
    pub offset_y: usize,
    pub offset_x: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub track: Option<Vec<[usize; 2]>>,
}

impl PadSpec {
    /// Center an `h x w` input inside the target canvas.
    pub fn centered(h: usize, w: usize, target_height: usize, target_width: usize) -> Result<Self> {
        if h > target_height || w > target_width {
            return Err(Error::Shape(format!(
                "{h}x{w} does not fit in {target_height}x{target_width}"
            )));
        }
        Ok(Self {
            target_height,
            target_width,
            offset_y: (target_height - h) / 2,
            offset_x: (target_width - w) / 2,
            track: None,
        })
    }

    /// Offset of frame `f`. Frames past the end of a track reuse its last entry.
    pub fn offset(&self, f: usize) -> (usize, usize) {
        match &self.track {
            Some(track) if !track.is_empty() => {
                let [y, x] = track[f.min(track.len() - 1)];
                (y, x)
            }
            _ => (self.offset_y, self.offset_x),
        }
    }

    pub fn validate(&self, frames: usize, h: usize, w: usize) -> Result<()> {
        if let Some(track) = &self.track {
            if track.is_empty() {
                return Err(Error::Config("pad track is empty".into()));
            }
        }
        for f in 0..frames {
            let (oy, ox) = self.offset(f);
            if oy + h > self.target_height || ox + w > self.target_width {
                return Err(Error::Shape(format!(
                    "frame {f}: {h}x{w} at ({oy},{ox}) exceeds {}x{}",
                    self.target_height, self.target_width
                )));
            }
        }
        Ok(())
    }
}

/// Place `video` on a zero canvas; the returned mask is 1 on the appended region.
pub fn pad_video(video: &VideoTensor, spec: &PadSpec) -> Result<(VideoTensor, MaskVideo)> {
    let (f, h, w) = (video.frames(), video.height(), video.width());
    spec.validate(f, h, w)?;
    let mut out = VideoTensor::zeros(f, spec.target_height, spec.target_width, video.channels());
    let mut mask = MaskVideo::ones(f, spec.target_height, spec.target_width);
    for fi in 0..f {
        let (oy, ox) = spec.offset(fi);
        let frame = video.crop(fi..fi + 1, 0..h, 0..w)?;
        out.paste(&frame, fi, oy, ox)?;
        for y in oy..oy + h {
            for x in ox..ox + w {
                mask.set(fi, y, x, false);
            }
        }
    }
    Ok((out, mask))
}

/// Extend the frame count to the next multiple of `multiple` by repeating the last frame.
pub fn pad_length(video: &VideoTensor, multiple: usize) -> Result<(VideoTensor, usize)> {
    if multiple == 0 {
        return Err(Error::Config("length multiple must be at least 1".into()));
    }
    let original = video.frames();
    let target = original.div_ceil(multiple) * multiple;
    if target == original {
        return Ok((video.clone(), original));
    }
    let mut data = video.data().to_vec();
    let last = video.frame(original - 1);
    for _ in original..target {
        data.extend_from_slice(last);
    }
    let out = VideoTensor::new(
        target,
        video.height(),
        video.width(),
        video.channels(),
        data,
    )?;
    Ok((out, original))
}

/// Keep the first `original_length` frames.
pub fn trim_length(video: &VideoTensor, original_length: usize) -> Result<VideoTensor> {
    if original_length > video.frames() || original_length == 0 {
        return Err(Error::Bounds(format!(
            "cannot trim {}-frame video to {original_length}",
            video.frames()
        )));
    }
    video.crop(0..original_length, 0..video.height(), 0..video.width())
}

/// Catmull-Rom cubic convolution kernel (a = -0.5).
pub fn cubic_kernel(x: f64) -> f64 {
    const A: f64 = -0.5;
    let x = x.abs();
    if x <= 1.0 {
        ((A + 2.0) * x - (A + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((A * x - 5.0 * A) * x + 8.0 * A) * x - 4.0 * A
    } else {
        0.0
    }
}

/// Source taps and weights for one output coordinate (half-pixel centers, edge clamp).
pub(crate) fn cubic_taps(out_index: usize, out_len: usize, in_len: usize) -> [(usize, f64); 4] {
    let scale = in_len as f64 / out_len as f64;
    let src = (out_index as f64 + 0.5) * scale - 0.5;
    let base = src.floor();
    let frac = src - base;
    let mut taps = [(0usize, 0.0f64); 4];
    for (k, tap) in taps.iter_mut().enumerate() {
        let offset = k as f64 - 1.0;
        let idx = (base as i64 + k as i64 - 1).clamp(0, in_len as i64 - 1) as usize;
        *tap = (idx, cubic_kernel(frac - offset));
    }
    taps
}

/// Resample every frame to `h x w` with a separable bicubic kernel, clamped to `[-1, 1]`.
pub fn resize_bicubic(video: &VideoTensor, h: usize, w: usize) -> Result<VideoTensor> {
    if h == 0 || w == 0 {
        return Err(Error::Shape("resize target must be non-empty".into()));
    }
    let (f, ih, iw, c) = (
        video.frames(),
        video.height(),
        video.width(),
        video.channels(),
    );
    let col_taps: Vec<_> = (0..w).map(|x| cubic_taps(x, w, iw)).collect();
    let row_taps: Vec<_> = (0..h).map(|y| cubic_taps(y, h, ih)).collect();
    let mut out = vec![0.0; f * h * w * c];
    let mut horiz = vec![0.0; ih * w * c];
    for fi in 0..f {
        let src = video.frame(fi);
        for y in 0..ih {
            for (x, taps) in col_taps.iter().enumerate() {
                for ch in 0..c {
                    let mut acc = 0.0;
                    for &(sx, wt) in taps {
                        acc += wt * src[(y * iw + sx) * c + ch];
                    }
                    horiz[(y * w + x) * c + ch] = acc;
                }
            }
        }
        let dst = &mut out[fi * h * w * c..(fi + 1) * h * w * c];
        for (y, taps) in row_taps.iter().enumerate() {
            for x in 0..w {
                for ch in 0..c {
                    let mut acc = 0.0;
                    for &(sy, wt) in taps {
                        acc += wt * horiz[(sy * w + x) * c + ch];
                    }
                    dst[(y * w + x) * c + ch] = acc.clamp(-1.0, 1.0);
                }
            }
        }
    }
    VideoTensor::new(f, h, w, c, out)
}

/// Shrink a mask so that a cell is 1 only if every source pixel falling in it is 1.
pub fn downsample_mask(mask: &MaskVideo, h: usize, w: usize) -> Result<MaskVideo> {
    let (f, ih, iw) = (mask.frames(), mask.height(), mask.width());
    if h == 0 || w == 0 || h > ih || w > iw {
        return Err(Error::Shape(format!(
            "cannot downsample {ih}x{iw} mask to {h}x{w}"
        )));
    }
    let mut out = MaskVideo::ones(f, h, w);
    for fi in 0..f {
        for y in 0..ih {
            let cy = y * h / ih;
            for x in 0..iw {
                if !mask.is_generate(fi, y, x) {
                    out.set(fi, cy, x * w / iw, false);
                }
            }
        }
    }
    Ok(out)
}
