//! Forward diffusion, the DDPM training loss and an ancestral sampler with
//! classifier-free guidance.
//!
//! Timesteps are 1-based: `t` ranges over `1..=T` and `alpha_bar(0)` is
//! taken to be exactly 1 (the clean image).

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::denoiser::Denoiser;
use crate::seed;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DiffusionError {
    #[error("invalid range: {0}")]
    InvalidRange(String),
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("timestep {t} outside 1..={max}")]
    TimestepOutOfRange { t: usize, max: usize },
    #[error("condition token {token} outside vocabulary of size {vocab}")]
    InvalidCondition { token: u32, vocab: u32 },
    #[error("pixel ({x}, {y}) outside {width}x{height} image")]
    PixelOutOfBounds {
        x: usize,
        y: usize,
        width: usize,
        height: usize,
    },
    #[error("config error: {0}")]
    Config(String),
    #[error("non-finite loss at {0}")]
    NonFinite(String),
}

pub type Result<T> = std::result::Result<T, DiffusionError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    #[default]
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub kind: ScheduleKind,
    pub num_timesteps: usize,
    pub betas: Vec<f64>,
    pub alphas: Vec<f64>,
    pub alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    /// Linear beta schedule over `num_timesteps` steps.
    pub fn new(
        kind: ScheduleKind,
        num_timesteps: usize,
        beta_start: f64,
        beta_end: f64,
    ) -> Result<Self> {
        if num_timesteps == 0 {
            return Err(DiffusionError::InvalidRange("T must be >= 1".into()));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(DiffusionError::InvalidRange(format!(
                "need 0 < beta_start <= beta_end < 1, got [{beta_start}, {beta_end}]"
            )));
        }
        let betas: Vec<f64> = match kind {
            ScheduleKind::Linear => (0..num_timesteps)
                .map(|i| {
                    if num_timesteps == 1 {
                        beta_start
                    } else {
                        beta_start + (beta_end - beta_start) * i as f64 / (num_timesteps - 1) as f64
                    }
                })
                .collect(),
        };
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(num_timesteps);
        let mut acc = 1.0;
        for a in &alphas {
            acc *= a;
            alpha_bars.push(acc);
        }
        Ok(Self {
            kind,
            num_timesteps,
            betas,
            alphas,
            alpha_bars,
        })
    }

    /// The toy default: T=100 with the classic [1e-4, 0.02] range rescaled
    /// by 1000/T so the terminal signal level matches a 1000-step schedule.
    pub fn toy_default() -> Self {
        Self::new(ScheduleKind::Linear, 100, 1e-3, 0.2).expect("valid default schedule")
    }

    /// `alpha_bar` at a 1-based timestep; `alpha_bar(0) == 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }

    pub fn check_timestep(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.num_timesteps {
            Err(DiffusionError::TimestepOutOfRange {
                t,
                max: self.num_timesteps,
            })
        } else {
            Ok(())
        }
    }
}

/// A single-channel image grid, row-major, nominal range [-1, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentImage {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl LatentImage {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(DiffusionError::InvalidRange("image dimensions must be > 0".into()));
        }
        if values.len() != width * height {
            return Err(DiffusionError::InvalidRange(format!(
                "{} values for a {width}x{height} grid",
                values.len()
            )));
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            values: vec![0.0; width * height],
        }
    }

    pub fn filled(width: usize, height: usize, v: f64) -> Self {
        Self {
            width,
            height,
            values: vec![v; width * height],
        }
    }

    /// Standard normal noise of the given shape.
    pub fn gaussian<R: Rng + ?Sized>(width: usize, height: usize, rng: &mut R) -> Self {
        let values = (0..width * height)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        Self {
            width,
            height,
            values,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.values[y * self.width + x] = v;
    }

    pub fn check_same_shape(&self, other: &LatentImage) -> Result<()> {
        if self.shape() != other.shape() {
            Err(DiffusionError::ShapeMismatch {
                expected: self.shape(),
                got: other.shape(),
            })
        } else {
            Ok(())
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoisySample {
    pub x_t: LatentImage,
    pub t: usize,
    pub eps: LatentImage,
}

/// Conditioning token. The null token is the unconditional input used for
/// guidance and condition dropout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Condition {
    pub token: u32,
    pub null: bool,
}

impl Condition {
    pub fn token(token: u32) -> Self {
        Self { token, null: false }
    }

    pub fn null() -> Self {
        Self {
            token: 0,
            null: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub num_inference_steps: usize,
    pub guidance_scale: f64,
}

impl Default for SamplerConfig {
    /// 50 steps at guidance 7.5.
    fn default() -> Self {
        Self {
            num_inference_steps: 50,
            guidance_scale: 7.5,
        }
    }
}

/// `x_t = sqrt(alpha_bar) * x0 + sqrt(1 - alpha_bar) * eps`.
pub fn forward_noise_with_alpha_bar(
    x0: &LatentImage,
    eps: &LatentImage,
    alpha_bar: f64,
) -> Result<LatentImage> {
    x0.check_same_shape(eps)?;
    let a = alpha_bar.sqrt();
    let s = (1.0 - alpha_bar).sqrt();
    let values = x0
        .values
        .iter()
        .zip(&eps.values)
        .map(|(x, e)| a * x + s * e)
        .collect();
    Ok(LatentImage {
        width: x0.width,
        height: x0.height,
        values,
    })
}

pub fn forward_noise(
    x0: &LatentImage,
    t: usize,
    eps: &LatentImage,
    schedule: &NoiseSchedule,
) -> Result<NoisySample> {
    schedule.check_timestep(t)?;
    let x_t = forward_noise_with_alpha_bar(x0, eps, schedule.alpha_bar(t))?;
    Ok(NoisySample {
        x_t,
        t,
        eps: eps.clone(),
    })
}

/// Sum of squared residuals between two grids.
pub fn squared_error(eps: &LatentImage, pred: &LatentImage) -> Result<f64> {
    eps.check_same_shape(pred)?;
    Ok(eps
        .values
        .iter()
        .zip(&pred.values)
        .map(|(e, p)| (e - p) * (e - p))
        .sum())
}

/// `||eps - eps_theta(x_t, t, c)||^2`, summed over pixels.
pub fn ddpm_loss(
    model: &Denoiser,
    x0: &LatentImage,
    t: usize,
    eps: &LatentImage,
    c: Condition,
    schedule: &NoiseSchedule,
) -> Result<f64> {
    let noisy = forward_noise(x0, t, eps, schedule)?;
    let pred = model.predict_eps(&noisy.x_t, t, c)?;
    squared_error(eps, &pred)
}

/// `uncond + scale * (cond - uncond)`; at scale 1 the conditional prediction
/// is returned untouched.
pub fn guided_eps(
    model: &Denoiser,
    x_t: &LatentImage,
    t: usize,
    c: Condition,
    guidance_scale: f64,
) -> Result<LatentImage> {
    let cond = model.predict_eps(x_t, t, c)?;
    if guidance_scale == 1.0 || c.null {
        return Ok(cond);
    }
    let uncond = model.predict_eps(x_t, t, Condition::null())?;
    Ok(combine_guidance(&cond, &uncond, guidance_scale))
}

pub fn combine_guidance(cond: &LatentImage, uncond: &LatentImage, scale: f64) -> LatentImage {
    let values = cond
        .values
        .iter()
        .zip(&uncond.values)
        .map(|(c, u)| u + scale * (c - u))
        .collect();
    LatentImage {
        width: cond.width,
        height: cond.height,
        values,
    }
}

/// Descending 1-based timesteps visited by the sampler.
pub fn inference_timesteps(num_timesteps: usize, steps: usize) -> Vec<usize> {
    let ratio = num_timesteps / steps;
    (0..steps).rev().map(|i| 1 + i * ratio).collect()
}

/// One ancestral DDPM step from `t` to `t_prev` given the noise prediction.
/// The predicted clean image is clipped to [-1, 1].
pub fn ancestral_step<R: Rng + ?Sized>(
    x_t: &LatentImage,
    eps_pred: &LatentImage,
    t: usize,
    t_prev: usize,
    schedule: &NoiseSchedule,
    rng: &mut R,
) -> LatentImage {
    let ab_t = schedule.alpha_bar(t);
    let ab_prev = schedule.alpha_bar(t_prev);
    let alpha = ab_t / ab_prev;
    let beta = 1.0 - alpha;
    let x0_coef = ab_prev.sqrt() * beta / (1.0 - ab_t);
    let xt_coef = alpha.sqrt() * (1.0 - ab_prev) / (1.0 - ab_t);
    let sigma = ((1.0 - ab_prev) / (1.0 - ab_t) * beta).max(0.0).sqrt();
    let (sa, sb) = (ab_t.sqrt(), (1.0 - ab_t).sqrt());
    let values = x_t
        .values
        .iter()
        .zip(&eps_pred.values)
        .map(|(&x, &e)| {
            let x0 = ((x - sb * e) / sa).clamp(-1.0, 1.0);
            let mean = x0_coef * x0 + xt_coef * x;
            if t_prev > 0 {
                mean + sigma * rng.sample::<f64, _>(StandardNormal)
            } else {
                mean
            }
        })
        .collect();
    LatentImage {
        width: x_t.width,
        height: x_t.height,
        values,
    }
}

/// Ancestral sampling from pure noise. Deterministic given `rng_seed`.
pub fn ancestral_sample(
    model: &Denoiser,
    c: Condition,
    cfg: &SamplerConfig,
    schedule: &NoiseSchedule,
    rng_seed: u64,
) -> Result<LatentImage> {
    if cfg.num_inference_steps == 0 || cfg.num_inference_steps > schedule.num_timesteps {
        return Err(DiffusionError::Config(format!(
            "num_inference_steps {} must lie in 1..={}",
            cfg.num_inference_steps, schedule.num_timesteps
        )));
    }
    if cfg.guidance_scale < 0.0 {
        return Err(DiffusionError::Config("guidance_scale must be >= 0".into()));
    }
    model.check_condition(c)?;
    let (w, h) = model.shape();
    let mut rng = seed::rng_from(rng_seed, &[0x5a_4d_50]);
    let mut x = LatentImage::gaussian(w, h, &mut rng);
    let steps = inference_timesteps(schedule.num_timesteps, cfg.num_inference_steps);
    for (i, &t) in steps.iter().enumerate() {
        let t_prev = steps.get(i + 1).copied().unwrap_or(0);
        let eps = guided_eps(model, &x, t, c, cfg.guidance_scale)?;
        x = ancestral_step(&x, &eps, t, t_prev, schedule, &mut rng);
    }
    Ok(x)
}
