//! Counter-based noise: every sample is a pure function of `(seed, stream, index)`.
//!
//! Tiles and trajectories draw from disjoint streams, so the noise a tile sees
//! never depends on scheduling order.

use crate::video::VideoTensor;

#[inline]
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hash an ordered list of words into one 64-bit value.
#[inline]
pub fn hash_words(words: &[u64]) -> u64 {
    let mut state = 0x6A09_E667_F3BC_C908u64;
    for &w in words {
        state = splitmix64(state ^ w).rotate_left(23);
    }
    splitmix64(state)
}

/// Derive a stream id from a label, e.g. `"gcg/round1/window3"`.
pub fn stream_id(label: &str) -> u64 {
    // FNV-1a, then mixed
    let mut h = 0xCBF2_9CE4_8422_2325u64;
    for b in label.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01B3);
    }
    splitmix64(h)
}

/// Uniform in the open interval (0, 1) with 53 bits of resolution.
#[inline]
pub fn uniform(seed: u64, stream: u64, index: u64) -> f64 {
    let bits = hash_words(&[seed, stream, index]) >> 11;
    (bits as f64 + 0.5) / (1u64 << 53) as f64
}

/// Standard normal via Box-Muller; consecutive index pairs share one uniform pair.
#[inline]
pub fn normal(seed: u64, stream: u64, index: u64) -> f64 {
    let pair = index >> 1;
    let u1 = uniform(seed, stream, pair << 1);
    let u2 = uniform(seed, stream, (pair << 1) | 1);
    let r = (-2.0 * u1.ln()).sqrt();
    let theta = std::f64::consts::TAU * u2;
    if index & 1 == 0 {
        r * theta.cos()
    } else {
        r * theta.sin()
    }
}

/// Uniform integer in `[0, n)`.
pub fn below(seed: u64, stream: u64, index: u64, n: u64) -> u64 {
    assert!(n > 0, "below(0)");
    ((uniform(seed, stream, index) * n as f64) as u64).min(n - 1)
}

/// Gaussian tensor of the given shape drawn from one stream.
pub fn gaussian_like(shape: &VideoTensor, seed: u64, stream: u64) -> VideoTensor {
    gaussian(
        shape.frames(),
        shape.height(),
        shape.width(),
        shape.channels(),
        seed,
        stream,
    )
}

pub fn gaussian(
    frames: usize,
    height: usize,
    width: usize,
    channels: usize,
    seed: u64,
    stream: u64,
) -> VideoTensor {
    let n = frames * height * width * channels;
    let data = (0..n as u64).map(|i| normal(seed, stream, i)).collect();
    VideoTensor::new(frames, height, width, channels, data).expect("gaussian shape valid")
}
