//! PSNR, SSIM, seam energy and revisit consistency.
//!
//! Values live in `[-1, 1]`, so the data range is 2.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::CaseGeometry;
use crate::tiling::TilePlan;
use crate::video::{Extent, MaskVideo, VideoTensor};

pub const DATA_RANGE: f64 = 2.0;
pub const SSIM_WINDOW: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Region {
    All,
    Observed,
    Outpainted,
}

impl Region {
    pub const ALL: [Region; 3] = [Region::All, Region::Observed, Region::Outpainted];

    pub fn name(&self) -> &'static str {
        match self {
            Region::All => "all",
            Region::Observed => "observed",
            Region::Outpainted => "outpainted",
        }
    }
}

/// Voxels a metric is computed over.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionSelector {
    pub which: Region,
    extent: Extent,
    selected: Vec<bool>,
    count: usize,
}

impl RegionSelector {
    pub fn all(extent: Extent) -> Self {
        Self {
            which: Region::All,
            extent,
            selected: vec![true; extent.voxels()],
            count: extent.voxels(),
        }
    }

    pub fn from_mask(mask: &MaskVideo, which: Region) -> Result<Self> {
        let selected: Vec<bool> = mask
            .data()
            .iter()
            .map(|&m| match which {
                Region::All => true,
                Region::Observed => m == 0.0,
                Region::Outpainted => m == 1.0,
            })
            .collect();
        let count = selected.iter().filter(|&&s| s).count();
        if count == 0 {
            return Err(Error::Value(format!("{} region is empty", which.name())));
        }
        Ok(Self {
            which,
            extent: mask.extent(),
            selected,
            count,
        })
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn is_selected(&self, f: usize, y: usize, x: usize) -> bool {
        self.selected[(f * self.extent.height + y) * self.extent.width + x]
    }
}

/// Mean squared error over the selected voxels and all channels.
pub fn mse(a: &VideoTensor, b: &VideoTensor, region: &RegionSelector) -> Result<f64> {
    a.ensure_same_shape(b, "metric inputs")?;
    if region.extent != a.extent() {
        return Err(Error::Shape("region does not match video extent".into()));
    }
    let c = a.channels();
    let mut sum = 0.0;
    for (p, &sel) in region.selected.iter().enumerate() {
        if sel {
            for ch in 0..c {
                let d = a.data()[p * c + ch] - b.data()[p * c + ch];
                sum += d * d;
            }
        }
    }
    Ok(sum / (region.count * c) as f64)
}

/// `10 log10(R^2 / MSE)`; identical inputs give `f64::INFINITY`.
pub fn psnr(a: &VideoTensor, b: &VideoTensor, region: &RegionSelector) -> Result<f64> {
    let m = mse(a, b, region)?;
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (DATA_RANGE * DATA_RANGE / m).log10())
}

/// Mean single-scale SSIM over every 8x8 window of every frame, on the channel mean.
pub fn ssim(a: &VideoTensor, b: &VideoTensor) -> Result<f64> {
    a.ensure_same_shape(b, "ssim inputs")?;
    let (h, w) = (a.height(), a.width());
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Shape(format!(
            "frame {h}x{w} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"
        )));
    }
    let (ga, gb) = (a.to_gray(), b.to_gray());
    let c1 = (0.01 * DATA_RANGE).powi(2);
    let c2 = (0.03 * DATA_RANGE).powi(2);
    let n = (SSIM_WINDOW * SSIM_WINDOW) as f64;
    let stride = w + 1;
    let mut total = 0.0;
    let mut windows = 0usize;
    for f in 0..a.frames() {
        let fa = ga.frame(f);
        let fb = gb.frame(f);
        // summed-area tables of x, y, x^2, y^2, xy
        let mut sat = vec![[0.0f64; 5]; (h + 1) * stride];
        for y in 0..h {
            let mut row = [0.0f64; 5];
            for x in 0..w {
                let (u, v) = (fa[y * w + x], fb[y * w + x]);
                let vals = [u, v, u * u, v * v, u * v];
                for k in 0..5 {
                    row[k] += vals[k];
                    sat[(y + 1) * stride + x + 1][k] = sat[y * stride + x + 1][k] + row[k];
                }
            }
        }
        for y0 in 0..=h - SSIM_WINDOW {
            for x0 in 0..=w - SSIM_WINDOW {
                let (y1, x1) = (y0 + SSIM_WINDOW, x0 + SSIM_WINDOW);
                let mut s = [0.0f64; 5];
                for (k, sk) in s.iter_mut().enumerate() {
                    *sk = sat[y1 * stride + x1][k]
                        - sat[y0 * stride + x1][k]
                        - sat[y1 * stride + x0][k]
                        + sat[y0 * stride + x0][k];
                }
                let (ma, mb) = (s[0] / n, s[1] / n);
                let va = s[2] / n - ma * ma;
                let vb = s[3] / n - mb * mb;
                let cov = s[4] / n - ma * mb;
                total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                    / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                windows += 1;
            }
        }
    }
    Ok(total / windows as f64)
}

/// Lines `(axis, position)` straddling every interior tile boundary.
fn seam_lines(plan: &TilePlan) -> [Vec<usize>; 3] {
    let e = plan.extent;
    let lens = [e.frames, e.height, e.width];
    let mut out: [Vec<usize>; 3] = Default::default();
    for (axis, len) in lens.into_iter().enumerate() {
        let mut bounds = Vec::new();
        for t in &plan.tiles {
            let (lo, hi) = match axis {
                0 => (t.f0, t.f1),
                1 => (t.y0, t.y1),
                _ => (t.x0, t.x1),
            };
            if lo > 0 {
                bounds.push(lo);
            }
            if hi < len {
                bounds.push(hi);
            }
        }
        let mut lines: Vec<usize> = bounds
            .into_iter()
            .flat_map(|b| [b - 1, b])
            .filter(|&p| p >= 1 && p + 1 < len)
            .collect();
        lines.sort_unstable();
        lines.dedup();
        out[axis] = lines;
    }
    out
}

/// Mean squared second difference, taken along each axis across the lines
/// adjacent to every interior tile boundary of `plan`. Zero if there are none.
pub fn seam_energy(video: &VideoTensor, plan: &TilePlan) -> Result<f64> {
    if video.extent() != plan.extent {
        return Err(Error::Shape("plan does not match video extent".into()));
    }
    let (nf, h, w, c) = (
        video.frames(),
        video.height(),
        video.width(),
        video.channels(),
    );
    let lines = seam_lines(plan);
    let mut sum = 0.0;
    let mut count = 0usize;
    let d = video.data();
    let idx = |f: usize, y: usize, x: usize| ((f * h + y) * w + x) * c;
    let steps = [h * w * c, w * c, c];
    for (axis, positions) in lines.iter().enumerate() {
        let step = steps[axis];
        for &p in positions {
            let (fr, yr, xr) = match axis {
                0 => (p..p + 1, 0..h, 0..w),
                1 => (0..nf, p..p + 1, 0..w),
                _ => (0..nf, 0..h, p..p + 1),
            };
            for f in fr {
                for y in yr.clone() {
                    for x in xr.clone() {
                        let i = idx(f, y, x);
                        for ch in 0..c {
                            let j = i + ch;
                            let dd = d[j - step] - 2.0 * d[j] + d[j + step];
                            sum += dd * dd;
                            count += 1;
                        }
                    }
                }
            }
        }
    }
    Ok(if count == 0 { 0.0 } else { sum / count as f64 })
}

/// Mean PSNR between the two visits of every revisit pair.
pub fn revisit_consistency(output: &VideoTensor, geometry: &CaseGeometry) -> Result<f64> {
    if geometry.revisits.is_empty() {
        return Err(Error::Value("case has no revisit pairs".into()));
    }
    let mut total = 0.0;
    for pair in &geometry.revisits {
        let crop = |f: usize| -> Result<VideoTensor> {
            let (y0, y1, x0, x1) = geometry.to_canvas(f, pair.region).ok_or_else(|| {
                Error::Geometry(format!("revisit region leaves the canvas at {f}"))
            })?;
            output.crop(f..f + 1, y0..y1, x0..x1)
        };
        let (a, b) = (crop(pair.first)?, crop(pair.second)?);
        total += psnr(&a, &b, &RegionSelector::all(a.extent()))?;
    }
    Ok(total / geometry.revisits.len() as f64)
}
