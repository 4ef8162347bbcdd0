//! Diffusion-DPO objective, its exact gradient, and the per-region gradient
//! diagnostic showing that identical backgrounds contribute nothing.
//!
//! ```text
//! delta(x) = ||eps - eps_ref(x_t)||^2 - ||eps - eps_theta(x_t)||^2
//! loss     = -log sigmoid(beta * (delta(x_w) - delta(x_l)))
//! grad     = weight * (grad ||eps - eps_theta(x_w,t)||^2 - grad ||eps - eps_theta(x_l,t)||^2)
//! weight   = beta * sigmoid(-beta * (delta(x_w) - delta(x_l)))
//! ```
//!
//! `grad` is the exact derivative of `loss`; `weight` is reported separately.
//! One `(t, eps)` is shared by both images of a pair: every entry point
//! takes exactly one of each.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::denoiser::{Denoiser, GradientVector};
use crate::diffusion::{
    forward_noise, squared_error, Condition, DiffusionError, LatentImage, NoiseSchedule, Result,
};

/// Marks the differing target region `R`; everything else is background.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionMask {
    pub width: usize,
    pub height: usize,
    target: Vec<bool>,
}

impl RegionMask {
    pub fn new(width: usize, height: usize, target: Vec<bool>) -> Result<Self> {
        if target.len() != width * height {
            return Err(DiffusionError::InvalidRange(format!(
                "mask has {} entries for {width}x{height}",
                target.len()
            )));
        }
        Ok(Self {
            width,
            height,
            target,
        })
    }

    /// Target = the axis-aligned box `[x0, x0+w) x [y0, y0+h)`, clipped.
    pub fn from_box(width: usize, height: usize, x0: usize, y0: usize, w: usize, h: usize) -> Self {
        let mut target = vec![false; width * height];
        for y in y0..(y0 + h).min(height) {
            for x in x0..(x0 + w).min(width) {
                target[y * width + x] = true;
            }
        }
        Self {
            width,
            height,
            target,
        }
    }

    /// Target = pixels where the two images differ.
    pub fn from_difference(a: &LatentImage, b: &LatentImage) -> Result<Self> {
        a.check_same_shape(b)?;
        let target = a
            .values
            .iter()
            .zip(&b.values)
            .map(|(x, y)| x.to_bits() != y.to_bits())
            .collect();
        Ok(Self {
            width: a.width,
            height: a.height,
            target,
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn is_target(&self, x: usize, y: usize) -> bool {
        self.target[y * self.width + x]
    }

    pub fn target_count(&self) -> usize {
        self.target.iter().filter(|t| **t).count()
    }

    pub fn background_count(&self) -> usize {
        self.target.len() - self.target_count()
    }

    /// Chebyshev distance from each pixel to the nearest target pixel
    /// (0 on the target, `usize::MAX` when the target is empty).
    pub fn distance_to_target(&self) -> Vec<usize> {
        let targets: Vec<(usize, usize)> = (0..self.height)
            .flat_map(|y| (0..self.width).map(move |x| (x, y)))
            .filter(|&(x, y)| self.is_target(x, y))
            .collect();
        (0..self.height)
            .flat_map(|y| (0..self.width).map(move |x| (x, y)))
            .map(|(x, y)| {
                targets
                    .iter()
                    .map(|&(tx, ty)| tx.abs_diff(x).max(ty.abs_diff(y)))
                    .min()
                    .unwrap_or(usize::MAX)
            })
            .collect()
    }

    /// Background pixels within Chebyshev distance `r` of the target.
    pub fn halo(&self, r: usize) -> Vec<bool> {
        self.distance_to_target()
            .into_iter()
            .map(|d| d > 0 && d <= r)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreferencePair {
    pub x_w: LatentImage,
    pub x_l: LatentImage,
    pub mask: RegionMask,
    pub condition: Condition,
}

impl PreferencePair {
    pub fn new(
        x_w: LatentImage,
        x_l: LatentImage,
        mask: RegionMask,
        condition: Condition,
    ) -> Result<Self> {
        x_w.check_same_shape(&x_l)?;
        if mask.shape() != x_w.shape() {
            return Err(DiffusionError::ShapeMismatch {
                expected: x_w.shape(),
                got: mask.shape(),
            });
        }
        Ok(Self {
            x_w,
            x_l,
            mask,
            condition,
        })
    }

    /// True when winner and loser agree bitwise on every background pixel.
    pub fn background_identical(&self) -> bool {
        self.x_w
            .values
            .iter()
            .zip(&self.x_l.values)
            .zip(&self.mask.target)
            .all(|((a, b), t)| *t || a.to_bits() == b.to_bits())
    }
}

#[derive(Debug, Clone)]
pub struct DpoConfig {
    pub beta: f64,
    pub reference: Arc<Denoiser>,
}

impl DpoConfig {
    pub fn new(beta: f64, reference: Denoiser) -> Self {
        Self {
            beta,
            reference: Arc::new(reference),
        }
    }
}

pub fn sigmoid(a: f64) -> f64 {
    if a >= 0.0 {
        1.0 / (1.0 + (-a).exp())
    } else {
        let e = a.exp();
        e / (1.0 + e)
    }
}

/// `-log sigmoid(a)` without overflow.
pub fn neg_log_sigmoid(a: f64) -> f64 {
    if a >= 0.0 {
        (-a).exp().ln_1p()
    } else {
        -a + a.exp().ln_1p()
    }
}

/// `-log sigmoid(beta * (delta_w - delta_l))`.
pub fn dpo_loss_from_deltas(beta: f64, delta_w: f64, delta_l: f64) -> f64 {
    neg_log_sigmoid(beta * (delta_w - delta_l))
}

fn check_model_shapes(model: &Denoiser, reference: &Denoiser) -> Result<()> {
    if model.config() != reference.config() {
        return Err(DiffusionError::Config(
            "policy and reference architectures differ".into(),
        ));
    }
    Ok(())
}

/// Relative improvement of the policy over the reference on one image.
pub fn delta(
    model: &Denoiser,
    reference: &Denoiser,
    x: &LatentImage,
    t: usize,
    eps: &LatentImage,
    c: Condition,
    schedule: &NoiseSchedule,
) -> Result<f64> {
    check_model_shapes(model, reference)?;
    let x_t = forward_noise(x, t, eps, schedule)?.x_t;
    let ref_err = squared_error(eps, &reference.predict_eps(&x_t, t, c)?)?;
    let pol_err = squared_error(eps, &model.predict_eps(&x_t, t, c)?)?;
    Ok(ref_err - pol_err)
}

fn check_pair(model: &Denoiser, pair: &PreferencePair, eps: &LatentImage) -> Result<()> {
    pair.x_w.check_same_shape(&pair.x_l)?;
    pair.x_w.check_same_shape(eps)?;
    if pair.x_w.shape() != model.shape() {
        return Err(DiffusionError::ShapeMismatch {
            expected: model.shape(),
            got: pair.x_w.shape(),
        });
    }
    Ok(())
}

pub fn dpo_loss(
    model: &Denoiser,
    cfg: &DpoConfig,
    pair: &PreferencePair,
    t: usize,
    eps: &LatentImage,
    schedule: &NoiseSchedule,
) -> Result<f64> {
    check_pair(model, pair, eps)?;
    let c = pair.condition;
    let dw = delta(model, &cfg.reference, &pair.x_w, t, eps, c, schedule)?;
    let dl = delta(model, &cfg.reference, &pair.x_l, t, eps, c, schedule)?;
    let loss = dpo_loss_from_deltas(cfg.beta, dw, dl);
    if !loss.is_finite() {
        return Err(DiffusionError::NonFinite(format!("dpo loss at t={t}")));
    }
    Ok(loss)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DpoGrad {
    pub loss: f64,
    pub grad: GradientVector,
    /// `beta * sigmoid(-beta * (delta_w - delta_l))`.
    pub weight: f64,
    pub delta_w: f64,
    pub delta_l: f64,
}

pub fn dpo_grad(
    model: &Denoiser,
    cfg: &DpoConfig,
    pair: &PreferencePair,
    t: usize,
    eps: &LatentImage,
    schedule: &NoiseSchedule,
) -> Result<DpoGrad> {
    check_pair(model, pair, eps)?;
    check_model_shapes(model, &cfg.reference)?;
    let c = pair.condition;
    let xw_t = forward_noise(&pair.x_w, t, eps, schedule)?.x_t;
    let xl_t = forward_noise(&pair.x_l, t, eps, schedule)?.x_t;
    let (lw, gw) = model.loss_grad_at(&xw_t, t, eps, c)?;
    let (ll, gl) = model.loss_grad_at(&xl_t, t, eps, c)?;
    let rw = squared_error(eps, &cfg.reference.predict_eps(&xw_t, t, c)?)?;
    let rl = squared_error(eps, &cfg.reference.predict_eps(&xl_t, t, c)?)?;
    let (delta_w, delta_l) = (rw - lw, rl - ll);
    let z = cfg.beta * (delta_w - delta_l);
    let loss = neg_log_sigmoid(z);
    if !loss.is_finite() {
        return Err(DiffusionError::NonFinite(format!("dpo loss at t={t}")));
    }
    let weight = cfg.beta * sigmoid(-z);
    let mut grad = gw;
    grad.axpy(-1.0, &gl);
    grad.scale(weight);
    Ok(DpoGrad {
        loss,
        grad,
        weight,
        delta_w,
        delta_l,
    })
}

/// Region decomposition of the winner-minus-loser gradient difference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CancellationDiagnostic {
    /// Norm of the summed difference over background pixels farther than
    /// the halo radius from the target.
    pub far_bg_residual: f64,
    /// Norm share of the background sum, `|bg| / (|bg| + |target|)`.
    pub bg_fraction: f64,
    pub target_fraction: f64,
}

/// JSON record emitted per diagnosed pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticRecord {
    pub pair_id: String,
    pub t: usize,
    pub far_bg_residual: f64,
    pub bg_fraction: f64,
    pub target_fraction: f64,
}

/// Splits `sum_p (g_p(x_w) - g_p(x_l))` by region, where `g_p` is the
/// gradient of pixel `p`'s squared residual. Norms are Euclidean over the
/// flat parameter vector. The DPO weight is a common factor and is left out.
pub fn background_cancellation_diagnostic(
    model: &Denoiser,
    _cfg: &DpoConfig,
    pair: &PreferencePair,
    t: usize,
    eps: &LatentImage,
    schedule: &NoiseSchedule,
    halo_radius: usize,
) -> Result<CancellationDiagnostic> {
    check_pair(model, pair, eps)?;
    if pair.mask.shape() != pair.x_w.shape() {
        return Err(DiffusionError::ShapeMismatch {
            expected: pair.x_w.shape(),
            got: pair.mask.shape(),
        });
    }
    let c = pair.condition;
    let xw_t = forward_noise(&pair.x_w, t, eps, schedule)?.x_t;
    let xl_t = forward_noise(&pair.x_l, t, eps, schedule)?.x_t;
    let cache_w = model.forward(&xw_t, t, c)?;
    let cache_l = model.forward(&xl_t, t, c)?;
    let dist = pair.mask.distance_to_target();
    let n = model.num_params();
    let mut far = vec![0.0; n];
    let mut bg = vec![0.0; n];
    let mut target = vec![0.0; n];
    let mut gw = vec![0.0; n];
    let mut gl = vec![0.0; n];
    let (w, h) = model.shape();
    for y in 0..h {
        for x in 0..w {
            gw.iter_mut().for_each(|v| *v = 0.0);
            gl.iter_mut().for_each(|v| *v = 0.0);
            model.pixel_grad_into(&xw_t, &cache_w, eps, (x, y), &mut gw)?;
            model.pixel_grad_into(&xl_t, &cache_l, eps, (x, y), &mut gl)?;
            let d = dist[y * w + x];
            let dest: &mut [&mut Vec<f64>] = if d == 0 {
                &mut [&mut target]
            } else if d > halo_radius {
                &mut [&mut bg, &mut far]
            } else {
                &mut [&mut bg]
            };
            for i in 0..n {
                let diff = gw[i] - gl[i];
                if diff != 0.0 {
                    for acc in dest.iter_mut() {
                        acc[i] += diff;
                    }
                }
            }
        }
    }
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let (bg_n, tg_n) = (norm(&bg), norm(&target));
    let total = bg_n + tg_n;
    let (bg_fraction, target_fraction) = if total > 0.0 {
        (bg_n / total, tg_n / total)
    } else {
        (0.0, 0.0)
    };
    Ok(CancellationDiagnostic {
        far_bg_residual: norm(&far),
        bg_fraction,
        target_fraction,
    })
}
