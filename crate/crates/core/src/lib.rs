//! Coarse-to-fine long video outpainting.
//!
//! Stage 1 builds a sparse, downsampled set of outpainted keyframes with
//! global-local trajectory swapping ([`gcg`]). Stage 2 inserts them as
//! guidance, completes the downsampled video over temporal tiles, then
//! refines at full resolution over spatio-temporal tiles ([`pipeline`]).
//! The denoiser is a pluggable trait; [`denoiser::ToyDenoiser`] is a
//! deterministic stand-in that makes the whole pipeline testable on a desk.

pub mod denoiser;
pub mod error;
pub mod exec;
pub mod gcg;
pub mod io;
pub mod metrics;
pub mod pipeline;
pub mod rng;
pub mod sampler;
pub mod scene;
pub mod tiling;
pub mod video;

pub use error::{Error, Result};
pub use video::{Extent, MaskVideo, PadSpec, VideoTensor};
