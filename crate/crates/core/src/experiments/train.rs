//! Base pretraining and the three fine-tuning variants.

use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::optim::{Adam, AdamConfig};
use super::task::{gen_synthetic_pair, PairKind, SyntheticTask};
use crate::denoiser::{Denoiser, DenoiserConfig, GradientVector};
use crate::diffusion::{Condition, DiffusionError, LatentImage, NoiseSchedule};
use crate::dpo::{background_cancellation_diagnostic, dpo_grad, DpoConfig, PreferencePair};
use crate::{fsutil, seed};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training diverged at step {step}: loss {loss}")]
    Diverged { step: usize, loss: f64 },
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Di3po,
    SftWinners,
    DpoBackgroundVaried,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Di3po, Variant::SftWinners, Variant::DpoBackgroundVaried];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Di3po => "di3po",
            Variant::SftWinners => "sft_winners",
            Variant::DpoBackgroundVaried => "dpo_background_varied",
        }
    }

    /// How pairs are built for this variant.
    pub fn pair_kind(self) -> PairKind {
        match self {
            Variant::DpoBackgroundVaried => PairKind::BackgroundVaried,
            _ => PairKind::Diptych,
        }
    }

    pub fn is_dpo(self) -> bool {
        self != Variant::SftWinners
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| format!("unknown variant {s:?}; expected di3po, sft_winners or dpo_background_varied"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub adam: AdamConfig,
    pub dpo_beta: f64,
    /// Probability of replacing the condition with the null token.
    pub cond_dropout: f64,
    pub seed: u64,
    /// Diagnostic cadence in steps; 0 disables diagnostics.
    pub diag_every: usize,
    /// Checkpoint cadence in steps; the final step is always kept.
    pub checkpoint_every: usize,
    pub halo_radius: usize,
    pub workers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 900,
            batch_size: 16,
            lr: 3e-4,
            adam: AdamConfig::default(),
            dpo_beta: 5.0,
            cond_dropout: 0.0,
            seed: 0,
            diag_every: 10,
            checkpoint_every: 300,
            halo_radius: 3,
            workers: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be >= 1".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(TrainError::Config(format!("lr must be finite and >= 0, got {}", self.lr)));
        }
        if !(0.0..=1.0).contains(&self.cond_dropout) {
            return Err(TrainError::Config("cond_dropout must lie in [0, 1]".into()));
        }
        if !(self.dpo_beta > 0.0) {
            return Err(TrainError::Config("dpo_beta must be > 0".into()));
        }
        Ok(())
    }
}

/// One training example description: which glyph, on which background.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairSpec {
    pub bg_seed: u64,
    pub glyph: usize,
}

/// `n` specs with glyphs cycled and backgrounds drawn from `seed`.
pub fn pair_specs(task: &SyntheticTask, n: usize, seed_: u64) -> Vec<PairSpec> {
    (0..n)
        .map(|i| PairSpec {
            bg_seed: seed::derive_seed(seed_, &[0x5bec, i as u64]),
            glyph: i % task.num_glyphs(),
        })
        .collect()
}

pub fn build_pairs(task: &SyntheticTask, specs: &[PairSpec], kind: PairKind) -> Result<Vec<PreferencePair>, TrainError> {
    specs
        .iter()
        .map(|s| gen_synthetic_pair(task, s.bg_seed, s.glyph, kind).map_err(TrainError::from))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub loss: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub far_bg_residual: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub bg_fraction: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub target_fraction: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub model: Denoiser,
    pub trace: Vec<TraceRow>,
    /// Parameters after each checkpointed step.
    pub snapshots: Vec<(usize, Denoiser)>,
    pub checkpoint_paths: Vec<PathBuf>,
}

/// Runs `f(i)` for `i in 0..n` on up to `workers` threads and returns the
/// results in index order.
pub(crate) fn parallel_map<T: Send, F: Fn(usize) -> T + Sync>(n: usize, workers: usize, f: F) -> Vec<T> {
    let workers = workers.clamp(1, n.max(1));
    if workers == 1 {
        return (0..n).map(&f).collect();
    }
    let chunk = n.div_ceil(workers);
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|k| {
                let f = &f;
                s.spawn(move || (k * chunk..((k + 1) * chunk).min(n)).map(f).collect::<Vec<T>>())
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("worker panicked")).collect()
    })
}

struct Draw {
    index: usize,
    t: usize,
    eps: LatentImage,
    drop: bool,
}

fn draw_batch(cfg: &TrainConfig, step: usize, n: usize, shape: (usize, usize), schedule: &NoiseSchedule) -> Vec<Draw> {
    let mut rng = seed::rng_from(cfg.seed, &[0x7a1, step as u64]);
    (0..cfg.batch_size)
        .map(|_| {
            let index = rng.random_range(0..n);
            let t = rng.random_range(1..=schedule.num_timesteps);
            let eps = LatentImage::gaussian(shape.0, shape.1, &mut rng);
            let drop = rng.random::<f64>() < cfg.cond_dropout;
            Draw { index, t, eps, drop }
        })
        .collect()
}

/// Sums per-item `(loss, grad)` in index order and averages.
fn reduce(items: Vec<(f64, GradientVector)>, num_params: usize) -> (f64, GradientVector) {
    let n = items.len() as f64;
    let mut loss = 0.0;
    let mut grad = GradientVector::zeros(num_params);
    for (l, g) in &items {
        loss += l;
        grad.axpy(1.0, g);
    }
    grad.scale(1.0 / n);
    (loss / n, grad)
}

fn checkpoint(
    model: &Denoiser,
    step: usize,
    variant: Option<Variant>,
    out_dir: Option<&Path>,
    out: &mut TrainOutput,
) -> Result<(), TrainError> {
    out.snapshots.push((step, model.clone()));
    if let Some(dir) = out_dir {
        let path = dir.join(format!("ckpt_{step:06}.bin"));
        let extra = serde_json::json!({ "step": step, "variant": variant.map(Variant::name) });
        model.save_checkpoint(&path, extra)?;
        out.checkpoint_paths.push(path);
    }
    Ok(())
}

/// Fine-tunes a copy of `base` with the given variant. `base` is also the
/// frozen DPO reference. The supervised variant only ever sees winners.
pub fn train(
    variant: Variant,
    pairs: &[PreferencePair],
    base: &Denoiser,
    schedule: &NoiseSchedule,
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<TrainOutput, TrainError> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(TrainError::Config("empty training set".into()));
    }
    let winners: Vec<(&LatentImage, Condition)> = pairs.iter().map(|p| (&p.x_w, p.condition)).collect();
    let dpo_cfg = DpoConfig::new(cfg.dpo_beta, base.clone());
    let mut model = base.clone();
    let mut adam = Adam::new(cfg.adam, model.num_params());
    let mut out = TrainOutput {
        model: base.clone(),
        trace: Vec::with_capacity(cfg.steps),
        snapshots: Vec::new(),
        checkpoint_paths: Vec::new(),
    };
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
    }
    for step in 1..=cfg.steps {
        let batch = draw_batch(cfg, step, pairs.len(), model.shape(), schedule);
        let results = parallel_map(batch.len(), cfg.workers, |i| -> Result<(f64, GradientVector), DiffusionError> {
            let d = &batch[i];
            if variant.is_dpo() {
                let mut pair = pairs[d.index].clone();
                if d.drop {
                    pair.condition = Condition::null();
                }
                let g = dpo_grad(&model, &dpo_cfg, &pair, d.t, &d.eps, schedule)?;
                Ok((g.loss, g.grad))
            } else {
                let (x0, c) = winners[d.index];
                let c = if d.drop { Condition::null() } else { c };
                model.loss_grad(x0, d.t, &d.eps, c, schedule)
            }
        });
        let items = results.into_iter().collect::<Result<Vec<_>, _>>()?;
        let (loss, grad) = reduce(items, model.num_params());
        if !loss.is_finite() || grad.0.iter().any(|g| !g.is_finite()) {
            return Err(TrainError::Diverged { step, loss });
        }
        let mut row = TraceRow {
            step,
            loss,
            far_bg_residual: None,
            bg_fraction: None,
            target_fraction: None,
        };
        if variant.is_dpo() && cfg.diag_every > 0 && step % cfg.diag_every == 0 {
            let d = &batch[0];
            let diag = background_cancellation_diagnostic(
                &model,
                &dpo_cfg,
                &pairs[d.index],
                d.t,
                &d.eps,
                schedule,
                cfg.halo_radius,
            )?;
            row.far_bg_residual = Some(diag.far_bg_residual);
            row.bg_fraction = Some(diag.bg_fraction);
            row.target_fraction = Some(diag.target_fraction);
        }
        out.trace.push(row);
        adam.step(model.params_mut(), &grad.0, cfg.lr);
        if model.params().iter().any(|p| !p.is_finite()) {
            return Err(TrainError::Diverged { step, loss });
        }
        if (cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0) || step == cfg.steps {
            checkpoint(&model, step, Some(variant), out_dir, &mut out)?;
        }
    }
    if let Some(dir) = out_dir {
        fsutil::write_jsonl(&dir.join("trace.jsonl"), &out.trace)?;
        model.save_checkpoint(&dir.join("final.bin"), serde_json::json!({ "step": cfg.steps, "variant": variant.name() }))?;
    }
    out.model = model;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub hidden: usize,
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub adam: AdamConfig,
    pub cond_dropout: f64,
    /// Share of examples drawn with the correct motif.
    pub correct_rate: f64,
    pub seed: u64,
    pub workers: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            hidden: 8,
            steps: 3000,
            batch_size: 16,
            lr: 3e-3,
            adam: AdamConfig::default(),
            cond_dropout: 0.1,
            correct_rate: 0.5,
            seed: 0,
            workers: 1,
        }
    }
}

/// DDPM pretraining on an even mix of correct and corrupted renderings, so
/// the base model places each glyph's motif but gets it wrong about half
/// the time.
pub fn pretrain_base(task: &SyntheticTask, schedule: &NoiseSchedule, cfg: &PretrainConfig) -> Result<Denoiser, TrainError> {
    if cfg.batch_size == 0 || cfg.hidden == 0 {
        return Err(TrainError::Config("batch_size and hidden must be >= 1".into()));
    }
    let (w, h) = task.shape();
    let dcfg = DenoiserConfig::small(w, h, cfg.hidden, schedule.num_timesteps, task.num_glyphs());
    let mut model = Denoiser::init(dcfg, seed::derive_seed(cfg.seed, &[0x1417]));
    let mut adam = Adam::new(cfg.adam, model.num_params());
    for step in 1..=cfg.steps {
        let mut rng = seed::rng_from(cfg.seed, &[0x9e7, step as u64]);
        let items: Vec<(LatentImage, usize, LatentImage, Condition)> = (0..cfg.batch_size)
            .map(|_| {
                let glyph = rng.random_range(0..task.num_glyphs());
                let bg: u64 = rng.random();
                let correct = rng.random::<f64>() < cfg.correct_rate;
                let x0 = task.render(bg, glyph, correct)?;
                let t = rng.random_range(1..=schedule.num_timesteps);
                let eps = LatentImage::gaussian(w, h, &mut rng);
                let c = if rng.random::<f64>() < cfg.cond_dropout {
                    Condition::null()
                } else {
                    Condition::token(glyph as u32)
                };
                Ok((x0, t, eps, c))
            })
            .collect::<Result<_, DiffusionError>>()?;
        let results = parallel_map(items.len(), cfg.workers, |i| {
            let (x0, t, eps, c) = &items[i];
            model.loss_grad(x0, *t, eps, *c, schedule)
        });
        let (loss, grad) = reduce(results.into_iter().collect::<Result<Vec<_>, _>>()?, model.num_params());
        if !loss.is_finite() {
            return Err(TrainError::Diverged { step, loss });
        }
        adam.step(model.params_mut(), &grad.0, cfg.lr);
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::task::TaskConfig;

    fn small_setup() -> (SyntheticTask, NoiseSchedule, Denoiser) {
        let task = SyntheticTask::new(TaskConfig {
            width: 10,
            height: 10,
            ..TaskConfig::default()
        })
        .unwrap();
        let schedule = NoiseSchedule::toy_default();
        let base = Denoiser::init(DenoiserConfig::small(10, 10, 4, 100, 4), 3);
        (task, schedule, base)
    }

    #[test]
    fn zero_lr_keeps_every_checkpoint_equal_to_base() {
        let (task, schedule, base) = small_setup();
        let pairs = build_pairs(&task, &pair_specs(&task, 8, 1), PairKind::Diptych).unwrap();
        let cfg = TrainConfig {
            steps: 6,
            batch_size: 4,
            lr: 0.0,
            checkpoint_every: 2,
            ..TrainConfig::default()
        };
        for v in Variant::ALL {
            let out = train(v, &pairs, &base, &schedule, &cfg, None).unwrap();
            assert_eq!(out.snapshots.iter().map(|s| s.0).collect::<Vec<_>>(), vec![2, 4, 6]);
            for (_, m) in &out.snapshots {
                assert_eq!(m.params(), base.params());
            }
        }
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let (task, schedule, base) = small_setup();
        let pairs = build_pairs(&task, &pair_specs(&task, 8, 1), PairKind::Diptych).unwrap();
        let mk = |workers| TrainConfig {
            steps: 3,
            batch_size: 5,
            workers,
            ..TrainConfig::default()
        };
        let a = train(Variant::Di3po, &pairs, &base, &schedule, &mk(1), None).unwrap();
        let b = train(Variant::Di3po, &pairs, &base, &schedule, &mk(3), None).unwrap();
        assert_eq!(a.model.params(), b.model.params());
        assert_eq!(a.trace, b.trace);
    }

    #[test]
    fn sft_trace_has_no_preference_fields() {
        let (task, schedule, base) = small_setup();
        let pairs = build_pairs(&task, &pair_specs(&task, 4, 1), PairKind::Diptych).unwrap();
        let cfg = TrainConfig {
            steps: 2,
            batch_size: 2,
            diag_every: 1,
            ..TrainConfig::default()
        };
        let out = train(Variant::SftWinners, &pairs, &base, &schedule, &cfg, None).unwrap();
        for row in &out.trace {
            let json = serde_json::to_value(row).unwrap();
            assert_eq!(json.as_object().unwrap().len(), 2, "{json}");
        }
        let out = train(Variant::Di3po, &pairs, &base, &schedule, &cfg, None).unwrap();
        assert!(out.trace.iter().all(|r| r.far_bg_residual == Some(0.0) && r.bg_fraction.is_some()));
    }

    #[test]
    fn sft_ignores_losers() {
        let (task, schedule, base) = small_setup();
        let pairs = build_pairs(&task, &pair_specs(&task, 4, 1), PairKind::Diptych).unwrap();
        let mut scrambled = pairs.clone();
        for p in &mut scrambled {
            p.x_l.values.iter_mut().for_each(|v| *v = 0.123);
        }
        let cfg = TrainConfig {
            steps: 3,
            batch_size: 2,
            ..TrainConfig::default()
        };
        let a = train(Variant::SftWinners, &pairs, &base, &schedule, &cfg, None).unwrap();
        let b = train(Variant::SftWinners, &scrambled, &base, &schedule, &cfg, None).unwrap();
        assert_eq!(a.model.params(), b.model.params());
    }

    #[test]
    fn divergence_names_the_step() {
        let (task, schedule, base) = small_setup();
        let pairs = build_pairs(&task, &pair_specs(&task, 4, 1), PairKind::Diptych).unwrap();
        let cfg = TrainConfig {
            steps: 5,
            batch_size: 2,
            lr: 1e300,
            ..TrainConfig::default()
        };
        match train(Variant::SftWinners, &pairs, &base, &schedule, &cfg, None) {
            Err(TrainError::Diverged { step, .. }) => assert!(step >= 1 && step <= 5),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn writes_trace_and_checkpoints() {
        let (task, schedule, base) = small_setup();
        let pairs = build_pairs(&task, &pair_specs(&task, 4, 1), PairKind::Diptych).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let cfg = TrainConfig {
            steps: 4,
            batch_size: 2,
            checkpoint_every: 2,
            diag_every: 2,
            ..TrainConfig::default()
        };
        let out = train(Variant::Di3po, &pairs, &base, &schedule, &cfg, Some(dir.path())).unwrap();
        let rows: Vec<TraceRow> = fsutil::read_jsonl(&dir.path().join("trace.jsonl")).unwrap();
        assert_eq!(rows, out.trace);
        let last = Denoiser::load_checkpoint(&out.checkpoint_paths[1]).unwrap();
        assert_eq!(last.params(), out.model.params());
        assert!(dir.path().join("final.bin").exists());
    }

    #[test]
    fn single_step_matches_adam_closed_form() {
        let task = SyntheticTask::new(TaskConfig {
            width: 2,
            height: 2,
            num_glyphs: 1,
            motif_size: 2,
            swaps: 1,
            ..TaskConfig::default()
        })
        .unwrap();
        let schedule = NoiseSchedule::toy_default();
        let base = Denoiser::init(DenoiserConfig::small(2, 2, 2, 100, 1), 8);
        let pairs = build_pairs(&task, &pair_specs(&task, 1, 0), PairKind::Diptych).unwrap();
        let cfg = TrainConfig {
            steps: 1,
            batch_size: 1,
            lr: 0.01,
            ..TrainConfig::default()
        };
        let d = &draw_batch(&cfg, 1, 1, (2, 2), &schedule)[0];
        for v in [Variant::SftWinners, Variant::Di3po] {
            let g = if v.is_dpo() {
                dpo_grad(&base, &DpoConfig::new(cfg.dpo_beta, base.clone()), &pairs[0], d.t, &d.eps, &schedule)
                    .unwrap()
                    .grad
            } else {
                base.loss_grad(&pairs[0].x_w, d.t, &d.eps, pairs[0].condition, &schedule).unwrap().1
            };
            let out = train(v, &pairs, &base, &schedule, &cfg, None).unwrap();
            for i in 0..base.num_params() {
                let expected = -cfg.lr * g.0[i] / (g.0[i].abs() + cfg.adam.eps);
                let got = out.model.params()[i] - base.params()[i];
                assert!((got - expected).abs() <= 1e-15, "{v} param {i}: {got} vs {expected}");
            }
        }
    }

    #[test]
    fn variant_names_roundtrip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
            assert_eq!(serde_json::to_value(v).unwrap(), serde_json::json!(v.name()));
        }
        assert!("dpo".parse::<Variant>().is_err());
    }
}
