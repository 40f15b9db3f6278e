//! HLVD raw video files and PPM previews.
//!
//! HLVD layout: the ASCII magic `HLVD`, four little-endian `u32` values
//! `F, H, W, C`, then `F*H*W*C` little-endian `f32` samples in frame-major,
//! row-major, channel-interleaved order. Masks use the same layout with `C = 1`.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::video::{MaskVideo, VideoTensor};

pub const HLVD_MAGIC: &[u8; 4] = b"HLVD";
const HEADER_LEN: usize = 20;

/// Serialize a tensor to HLVD bytes. Samples are stored as `f32`.
pub fn encode_hlvd(video: &VideoTensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + video.len() * 4);
    out.extend_from_slice(HLVD_MAGIC);
    for dim in [
        video.frames(),
        video.height(),
        video.width(),
        video.channels(),
    ] {
        out.extend_from_slice(&(dim as u32).to_le_bytes());
    }
    for &v in video.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode_hlvd(bytes: &[u8]) -> Result<VideoTensor> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format(format!(
            "file is {} bytes, shorter than the header",
            bytes.len()
        )));
    }
    if &bytes[..4] != HLVD_MAGIC {
        return Err(Error::Format("bad magic, expected HLVD".into()));
    }
    let dim = |i: usize| {
        let start = 4 + 4 * i;
        u32::from_le_bytes(bytes[start..start + 4].try_into().unwrap()) as usize
    };
    let (f, h, w, c) = (dim(0), dim(1), dim(2), dim(3));
    let count = f
        .checked_mul(h)
        .and_then(|n| n.checked_mul(w))
        .and_then(|n| n.checked_mul(c))
        .ok_or_else(|| Error::Format("header dimensions overflow".into()))?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() < count * 4 {
        return Err(Error::Format(format!(
            "truncated payload: header declares {count} samples, found {}",
            payload.len() / 4
        )));
    }
    if payload.len() > count * 4 {
        return Err(Error::Format(format!(
            "{} trailing bytes after payload",
            payload.len() - count * 4
        )));
    }
    let data: Vec<f64> = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
        .collect();
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Format("non-finite sample in payload".into()));
    }
    VideoTensor::new(f, h, w, c, data).map_err(|e| Error::Format(e.to_string()))
}

pub fn write_raw(path: impl AsRef<Path>, video: &VideoTensor) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_hlvd(video);
    // write-then-rename so readers never observe a half-written file
    let tmp = path.with_extension("hlvd.partial");
    {
        let mut w = BufWriter::new(fs::File::create(&tmp)?);
        w.write_all(&bytes)?;
        w.flush()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_raw(path: impl AsRef<Path>) -> Result<VideoTensor> {
    decode_hlvd(&fs::read(path)?)
}

pub fn write_mask(path: impl AsRef<Path>, mask: &MaskVideo) -> Result<()> {
    write_raw(path, mask.as_tensor())
}

pub fn read_mask(path: impl AsRef<Path>) -> Result<MaskVideo> {
    MaskVideo::from_tensor(read_raw(path)?).map_err(|e| Error::Format(e.to_string()))
}

/// Map a sample in `[-1, 1]` to a byte: `round((v + 1) / 2 * 255)`, clamped.
pub fn to_byte(v: f64) -> u8 {
    ((v + 1.0) * 0.5 * 255.0).round().clamp(0.0, 255.0) as u8
}

pub fn from_byte(b: u8) -> f64 {
    b as f64 / 127.5 - 1.0
}

/// Encode one frame as binary P6. Single-channel frames are replicated to RGB.
pub fn encode_ppm(video: &VideoTensor, frame: usize) -> Result<Vec<u8>> {
    if frame >= video.frames() {
        return Err(Error::Bounds(format!(
            "frame {frame} of {}-frame video",
            video.frames()
        )));
    }
    let (h, w, c) = (video.height(), video.width(), video.channels());
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    for px in video.frame(frame).chunks_exact(c) {
        if c == 3 {
            out.extend(px.iter().map(|&v| to_byte(v)));
        } else {
            let b = to_byte(px[0]);
            out.extend_from_slice(&[b, b, b]);
        }
    }
    Ok(out)
}

/// Parse a binary P6 file with maxval 255 into a one-frame, three-channel tensor.
pub fn decode_ppm(bytes: &[u8]) -> Result<VideoTensor> {
    let mut fields = Vec::with_capacity(4);
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format("truncated PPM header".into()));
        }
        fields.push(
            std::str::from_utf8(&bytes[start..pos])
                .map_err(|_| Error::Format("PPM header is not ASCII".into()))?,
        );
    }
    if fields[0] != "P6" {
        return Err(Error::Format(format!("unsupported PPM kind {}", fields[0])));
    }
    let parse = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::Format(format!("bad PPM header field {s}")))
    };
    let (w, h, maxval) = (parse(fields[1])?, parse(fields[2])?, parse(fields[3])?);
    if maxval != 255 {
        return Err(Error::Format(format!("unsupported maxval {maxval}")));
    }
    let body = &bytes[pos + 1..];
    if body.len() < w * h * 3 {
        return Err(Error::Format("truncated PPM body".into()));
    }
    let data = body[..w * h * 3].iter().map(|&b| from_byte(b)).collect();
    VideoTensor::new(1, h, w, 3, data)
}

/// Write `frame_NNNNN.ppm` for every `every`-th frame; returns the written paths.
pub fn export_ppm(
    video: &VideoTensor,
    dir: impl AsRef<Path>,
    every: usize,
) -> Result<Vec<std::path::PathBuf>> {
    if every == 0 {
        return Err(Error::Config("--every must be at least 1".into()));
    }
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for f in (0..video.frames()).step_by(every) {
        let path = dir.join(format!("frame_{f:05}.ppm"));
        fs::write(&path, encode_ppm(video, f)?)?;
        written.push(path);
    }
    Ok(written)
}
