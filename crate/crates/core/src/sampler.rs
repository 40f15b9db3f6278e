//! Rectified-flow schedule, noising, velocity targets and Euler stepping.
//!
//! The interpolant is `z_t = (1 - t) x0 + t eps`, so the exact velocity is
//! `eps - x0` for every `t` and an Euler step with it is exact.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::video::VideoTensor;

/// Linear time grid from 1 down to 0 plus the number of early steps that swap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSchedule {
    total_steps: usize,
    /// Descending: `times[0] == 1.0`, `times[total_steps] == 0.0`.
    times: Vec<f64>,
    swap_steps: usize,
}

impl SampleSchedule {
    pub fn new(total_steps: usize, swap_steps: usize) -> Result<Self> {
        if total_steps == 0 {
            return Err(Error::Config("total_steps must be at least 1".into()));
        }
        if swap_steps > total_steps {
            return Err(Error::Config(format!(
                "swap_steps {swap_steps} exceeds total_steps {total_steps}"
            )));
        }
        let times = (0..=total_steps)
            .map(|i| (total_steps - i) as f64 / total_steps as f64)
            .collect();
        Ok(Self {
            total_steps,
            times,
            swap_steps,
        })
    }

    pub fn total_steps(&self) -> usize {
        self.total_steps
    }

    pub fn swap_steps(&self) -> usize {
        self.swap_steps
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// Time at noise level `k`, where level `T` is pure noise and level 0 is clean.
    pub fn level_time(&self, level: usize) -> f64 {
        self.times[self.total_steps - level]
    }

    /// `(step, t_from, t_to)` for a descent starting at `level`; `step` counts from
    /// the first step taken.
    pub fn descent_from(&self, level: usize) -> impl Iterator<Item = (usize, f64, f64)> + '_ {
        let level = level.min(self.total_steps);
        (0..level).map(move |s| {
            let k = level - s;
            (s, self.level_time(k), self.level_time(k - 1))
        })
    }

    /// Full descent from pure noise.
    pub fn descent(&self) -> impl Iterator<Item = (usize, f64, f64)> + '_ {
        self.descent_from(self.total_steps)
    }

    /// Whether global-local swapping applies after step `step`.
    pub fn swaps_after(&self, step: usize) -> bool {
        step < self.swap_steps
    }
}

/// `z_t = (1 - t) x0 + t eps`.
pub fn add_noise(x0: &VideoTensor, eps: &VideoTensor, t: f64) -> Result<VideoTensor> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Schedule(format!("time {t} outside [0, 1]")));
    }
    x0.zip_map(eps, |a, e| (1.0 - t) * a + t * e)
}

/// `v* = eps - x0`.
pub fn velocity_target(x0: &VideoTensor, eps: &VideoTensor) -> Result<VideoTensor> {
    x0.zip_map(eps, |a, e| e - a)
}

/// Euler update `z + (t_to - t_from) * v_hat`.
pub fn step(z: &VideoTensor, v_hat: &VideoTensor, t_from: f64, t_to: f64) -> Result<VideoTensor> {
    if t_to >= t_from {
        return Err(Error::Schedule(format!(
            "step must descend, got {t_from} -> {t_to}"
        )));
    }
    let dt = t_to - t_from;
    z.zip_map(v_hat, |zv, v| zv + dt * v)
}

/// In-place form of [`step`] used by the tiled loops.
pub(crate) fn step_in_place(z: &mut [f64], v_hat: &[f64], t_from: f64, t_to: f64) {
    let dt = t_to - t_from;
    for (zv, v) in z.iter_mut().zip(v_hat) {
        *zv += dt * v;
    }
}

/// Loss weight of the training objective at time `t`. Constant.
pub fn weight(_t: f64) -> f64 {
    1.0
}

/// Noise level at which partial denoising starts for a given strength.
pub fn sdedit_level(strength: f64, schedule: &SampleSchedule) -> Result<usize> {
    if !(strength > 0.0 && strength <= 1.0) {
        return Err(Error::Config(format!("strength {strength} outside (0, 1]")));
    }
    let t = schedule.total_steps();
    Ok(((strength * t as f64).round() as usize).clamp(1, t))
}

/// Noise `x_init` to the level selected by `strength`; returns the latent and its level.
pub fn sdedit_start(
    x_init: &VideoTensor,
    strength: f64,
    schedule: &SampleSchedule,
    rng_seed: u64,
) -> Result<(VideoTensor, usize)> {
    sdedit_start_stream(
        x_init,
        strength,
        schedule,
        rng_seed,
        rng::stream_id("sdedit"),
    )
}

pub fn sdedit_start_stream(
    x_init: &VideoTensor,
    strength: f64,
    schedule: &SampleSchedule,
    rng_seed: u64,
    stream: u64,
) -> Result<(VideoTensor, usize)> {
    let level = sdedit_level(strength, schedule)?;
    let eps = rng::gaussian_like(x_init, rng_seed, stream);
    let z = add_noise(x_init, &eps, schedule.level_time(level))?;
    Ok((z, level))
}
