#![allow(dead_code)]

use di3po::denoiser::{Denoiser, DenoiserConfig};
use di3po::diffusion::{ddpm_loss, forward_noise, Condition, LatentImage, NoiseSchedule};
use di3po::dpo::{delta, dpo_grad, dpo_loss, DpoConfig, PreferencePair, RegionMask};
use di3po::seed;
use rand::Rng;

pub const FD_STEP: f64 = 1e-6;
pub const REL_FLOOR: f64 = 1e-3;

/// `|a - n| / max(|a|, |n|, floor)`. The floor keeps components whose
/// magnitude is at the level of rounding noise from dominating.
pub fn rel_err(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

/// Central differences of `f` at `params` for every coordinate.
pub fn central_differences(params: &[f64], f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut p = params.to_vec();
    (0..p.len())
        .map(|i| {
            let orig = p[i];
            p[i] = orig + FD_STEP;
            let up = f(&p);
            p[i] = orig - FD_STEP;
            let down = f(&p);
            p[i] = orig;
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| rel_err(*a, *n, REL_FLOOR))
        .fold(0.0, f64::max)
}

pub struct Instance {
    pub model: Denoiser,
    pub reference: Denoiser,
    pub pair: PreferencePair,
    pub t: usize,
    pub eps: LatentImage,
    pub schedule: NoiseSchedule,
}

/// A random small network with every parameter block perturbed, a nearby
/// reference, a pair differing on a box, and a random `(t, eps)`.
pub fn instance(s: u64) -> Instance {
    let schedule = NoiseSchedule::toy_default();
    let cfg = DenoiserConfig::small(6, 6, 3, schedule.num_timesteps, 3);
    let mut rng = seed::rng_from(s, &[0x6ad]);
    let mut model = Denoiser::init(cfg, s);
    for v in model.params_mut() {
        *v += rng.random_range(-0.3..0.3);
    }
    let mut reference = model.clone();
    for v in reference.params_mut() {
        *v += rng.random_range(-0.1..0.1);
    }
    let x_w = LatentImage::gaussian(6, 6, &mut rng);
    let mut x_l = x_w.clone();
    for y in 2..4 {
        for x in 2..4 {
            x_l.set(x, y, rng.random_range(-1.0..1.0));
        }
    }
    let mask = RegionMask::from_box(6, 6, 2, 2, 2, 2);
    let c = if rng.random::<f64>() < 0.2 {
        Condition::null()
    } else {
        Condition::token(rng.random_range(0..3))
    };
    let pair = PreferencePair::new(x_w, x_l, mask, c).unwrap();
    let t = rng.random_range(1..=schedule.num_timesteps);
    let eps = LatentImage::gaussian(6, 6, &mut rng);
    Instance {
        model,
        reference,
        pair,
        t,
        eps,
        schedule,
    }
}

fn with_params(m: &Denoiser, p: &[f64]) -> Denoiser {
    Denoiser::from_params(*m.config(), p.to_vec()).unwrap()
}

/// Max relative error between the analytic and numeric DDPM gradients.
pub fn ddpm_grad_error(inst: &Instance) -> f64 {
    let Instance { model, pair, t, eps, schedule, .. } = inst;
    let (_, g) = model.loss_grad(&pair.x_w, *t, eps, pair.condition, schedule).unwrap();
    let mut p = model.params().to_vec();
    let mut numeric = Vec::with_capacity(p.len());
    for i in 0..p.len() {
        let orig = p[i];
        p[i] = orig + FD_STEP;
        let up = with_params(model, &p);
        p[i] = orig - FD_STEP;
        let down = with_params(model, &p);
        p[i] = orig;
        numeric.push(err_difference(&up, &down, &pair.x_w, *t, eps, pair.condition, schedule) / (2.0 * FD_STEP));
    }
    max_rel_err(&g.0, &numeric)
}

/// Max relative error against plain central differences of `ddpm_loss`.
pub fn ddpm_grad_error_naive(inst: &Instance) -> f64 {
    let Instance { model, pair, t, eps, schedule, .. } = inst;
    let (_, g) = model.loss_grad(&pair.x_w, *t, eps, pair.condition, schedule).unwrap();
    let numeric = central_differences(model.params(), |p| {
        ddpm_loss(&with_params(model, p), &pair.x_w, *t, eps, pair.condition, schedule).unwrap()
    });
    max_rel_err(&g.0, &numeric)
}

/// `err(theta_up) - err(theta_down)` for one image, summed per pixel as
/// `(o_down - o_up) * (2 eps - o_up - o_down)` so the cancellation happens
/// at output scale instead of loss scale.
fn err_difference(up: &Denoiser, down: &Denoiser, x0: &LatentImage, t: usize, eps: &LatentImage, c: Condition, s: &NoiseSchedule) -> f64 {
    let x_t = forward_noise(x0, t, eps, s).unwrap().x_t;
    let ou = up.predict_eps(&x_t, t, c).unwrap();
    let od = down.predict_eps(&x_t, t, c).unwrap();
    (0..eps.values.len())
        .map(|p| (od.values[p] - ou.values[p]) * (2.0 * eps.values[p] - ou.values[p] - od.values[p]))
        .sum()
}

/// Max relative error between the analytic and numeric DPO gradients.
///
/// The reference terms of `delta` do not depend on the policy, so they
/// cancel exactly in `z(theta + h) - z(theta - h)`; the loss difference is
/// then `softplus(a) - softplus(b) = log1p(sigmoid(b) * expm1(a - b))` with
/// `a = -z(theta + h)`, `b = -z(theta - h)`.
pub fn dpo_grad_error(inst: &Instance, beta: f64) -> f64 {
    let Instance { model, reference, pair, t, eps, schedule } = inst;
    let cfg = DpoConfig::new(beta, reference.clone());
    let g = dpo_grad(model, &cfg, pair, *t, eps, schedule).unwrap();
    let c = pair.condition;
    let sigmoid = |a: f64| 1.0 / (1.0 + (-a).exp());
    let mut p = model.params().to_vec();
    let mut numeric = Vec::with_capacity(p.len());
    for i in 0..p.len() {
        let orig = p[i];
        p[i] = orig + FD_STEP;
        let up = with_params(model, &p);
        p[i] = orig - FD_STEP;
        let down = with_params(model, &p);
        p[i] = orig;
        let dw = delta(&down, reference, &pair.x_w, *t, eps, c, schedule).unwrap();
        let dl = delta(&down, reference, &pair.x_l, *t, eps, c, schedule).unwrap();
        let z_down = beta * (dw - dl);
        // delta = ref_err - pol_err, so z_up - z_down = -beta * (dErr_w - dErr_l).
        let dz = -beta
            * (err_difference(&up, &down, &pair.x_w, *t, eps, c, schedule)
                - err_difference(&up, &down, &pair.x_l, *t, eps, c, schedule));
        let diff = (sigmoid(-z_down) * (-dz).exp_m1()).ln_1p();
        numeric.push(diff / (2.0 * FD_STEP));
    }
    max_rel_err(&g.grad.0, &numeric)
}

/// Max relative error against plain central differences of `dpo_loss`.
pub fn dpo_grad_error_naive(inst: &Instance, beta: f64) -> f64 {
    let Instance { model, reference, pair, t, eps, schedule } = inst;
    let cfg = DpoConfig::new(beta, reference.clone());
    let g = dpo_grad(model, &cfg, pair, *t, eps, schedule).unwrap();
    let numeric = central_differences(model.params(), |p| {
        dpo_loss(&with_params(model, p), &cfg, pair, *t, eps, schedule).unwrap()
    });
    max_rel_err(&g.grad.0, &numeric)
}
