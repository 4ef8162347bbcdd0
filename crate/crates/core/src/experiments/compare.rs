//! Matched-budget comparison of the fine-tuning variants.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::evaluate::{evaluate_target_accuracy, AccuracyReport, DenoiserGenerator};
use super::task::{gen_synthetic_pair, PairKind, SyntheticTask, TaskConfig};
use super::train::{build_pairs, pair_specs, parallel_map, pretrain_base, train, PairSpec, PretrainConfig, TrainConfig, TrainError, Variant};
use crate::denoiser::{Denoiser, DenoiserConfig};
use crate::diffusion::{DiffusionError, LatentImage, NoiseSchedule, SamplerConfig};
use crate::dpo::{background_cancellation_diagnostic, DpoConfig};
use crate::{fsutil, seed};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub task: TaskConfig,
    pub pretrain: PretrainConfig,
    pub sampler: SamplerConfig,
    pub num_pairs: usize,
    pub eval_samples: usize,
    /// Matched pairs used for the background-fraction comparison.
    pub diag_pairs: usize,
    pub seed: u64,
    pub workers: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            task: TaskConfig::default(),
            pretrain: PretrainConfig::default(),
            sampler: SamplerConfig::default(),
            num_pairs: 300,
            eval_samples: 400,
            diag_pairs: 100,
            seed: 0,
            workers: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantRun {
    pub variant: Variant,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelResult {
    pub name: String,
    pub accuracy: f64,
    pub half_width: f64,
    pub per_glyph: Vec<f64>,
    /// Mean of the logged background fractions; absent for the supervised
    /// variant and for untrained models.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mean_bg_fraction: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub max_far_bg_residual: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub final_loss: Option<f64>,
}

impl ModelResult {
    fn from_accuracy(name: &str, acc: &AccuracyReport) -> Self {
        Self {
            name: name.to_string(),
            accuracy: acc.overall,
            half_width: acc.half_width,
            per_glyph: acc.per_glyph.clone(),
            mean_bg_fraction: None,
            max_far_bg_residual: None,
            final_loss: None,
        }
    }
}

/// Paired background-fraction measurement on diptych versus
/// background-varied versions of the same pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BgFractionComparison {
    pub n: usize,
    pub diptych_mean: f64,
    pub varied_mean: f64,
    /// Pairs where the diptych fraction is strictly lower.
    pub diptych_lower: usize,
    pub ties: usize,
    /// One-sided sign-test p-value for "diptych lower".
    pub sign_test_p: f64,
    pub diptych_max_far_bg_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub config: ExperimentConfig,
    pub runs: Vec<VariantRun>,
    /// Randomly initialised model.
    pub untrained: ModelResult,
    /// Pretrained model every variant starts from; also the DPO reference.
    pub base: ModelResult,
    pub variants: Vec<ModelResult>,
    pub bg_fraction: BgFractionComparison,
}

impl ComparisonReport {
    pub fn variant(&self, v: Variant) -> Option<&ModelResult> {
        self.variants.iter().find(|r| r.name == v.name())
    }
}

/// `P(X >= k)` for `X ~ Binomial(n, 1/2)`.
pub fn sign_test_p(k: usize, n: usize) -> f64 {
    if k == 0 {
        return 1.0;
    }
    if k > n {
        return 0.0;
    }
    // log C(n, i) accumulated from i = 0.
    let mut log_c = vec![0.0f64; n + 1];
    for i in 1..=n {
        log_c[i] = log_c[i - 1] + ((n - i + 1) as f64).ln() - (i as f64).ln();
    }
    let log_half_n = -(n as f64) * std::f64::consts::LN_2;
    (k..=n).map(|i| (log_c[i] + log_half_n).exp()).sum::<f64>().min(1.0)
}

/// Background fractions for the diptych and varied version of each spec,
/// with a shared `(t, eps)` per spec.
pub fn compare_bg_fraction(
    model: &Denoiser,
    task: &SyntheticTask,
    specs: &[PairSpec],
    schedule: &NoiseSchedule,
    halo_radius: usize,
    rng_seed: u64,
    workers: usize,
) -> Result<BgFractionComparison, DiffusionError> {
    let cfg = DpoConfig::new(1.0, model.clone());
    let (w, h) = task.shape();
    let rows = parallel_map(specs.len(), workers, |i| {
        let s = specs[i];
        let mut rng = seed::rng_from(rng_seed, &[0xd1a6, i as u64]);
        let t = rng.random_range(1..=schedule.num_timesteps);
        let eps = LatentImage::gaussian(w, h, &mut rng);
        let dip = gen_synthetic_pair(task, s.bg_seed, s.glyph, PairKind::Diptych)?;
        let var = gen_synthetic_pair(task, s.bg_seed, s.glyph, PairKind::BackgroundVaried)?;
        let a = background_cancellation_diagnostic(model, &cfg, &dip, t, &eps, schedule, halo_radius)?;
        let b = background_cancellation_diagnostic(model, &cfg, &var, t, &eps, schedule, halo_radius)?;
        Ok((a, b))
    })
    .into_iter()
    .collect::<Result<Vec<_>, DiffusionError>>()?;
    let n = rows.len();
    let mean = |f: &dyn Fn(usize) -> f64| if n == 0 { 0.0 } else { (0..n).map(f).sum::<f64>() / n as f64 };
    let lower = rows.iter().filter(|(a, b)| a.bg_fraction < b.bg_fraction).count();
    let ties = rows.iter().filter(|(a, b)| a.bg_fraction == b.bg_fraction).count();
    Ok(BgFractionComparison {
        n,
        diptych_mean: mean(&|i| rows[i].0.bg_fraction),
        varied_mean: mean(&|i| rows[i].1.bg_fraction),
        diptych_lower: lower,
        ties,
        sign_test_p: sign_test_p(lower, n - ties),
        diptych_max_far_bg_residual: rows.iter().map(|r| r.0.far_bg_residual).fold(0.0, f64::max),
    })
}

/// Pretrains one base model, fine-tunes every run from it on pairs built
/// from one shared spec list, and evaluates all models on the same sampler
/// seeds. Runs must share steps, batch size and seed. When `out_dir` is
/// given, each run's trace and checkpoints go to `out_dir/<variant>/`.
/// A finished comparison together with every model it scored.
#[derive(Debug, Clone)]
pub struct ComparisonRun {
    pub report: ComparisonReport,
    /// `untrained`, `base`, then one entry per variant, in run order.
    pub models: Vec<(String, Denoiser)>,
}

pub fn compare_variants(
    cfg: &ExperimentConfig,
    runs: &[VariantRun],
    out_dir: Option<&Path>,
) -> Result<ComparisonReport, TrainError> {
    run_comparison(cfg, runs, out_dir).map(|r| r.report)
}

pub fn run_comparison(
    cfg: &ExperimentConfig,
    runs: &[VariantRun],
    out_dir: Option<&Path>,
) -> Result<ComparisonRun, TrainError> {
    let first = runs.first().ok_or_else(|| TrainError::Config("no variants to compare".into()))?;
    for r in runs {
        let (a, b) = (&r.train, &first.train);
        if a.steps != b.steps || a.batch_size != b.batch_size || a.seed != b.seed {
            return Err(TrainError::Config(format!(
                "mismatched budgets: {} runs {} steps x {} (seed {}), {} runs {} steps x {} (seed {})",
                r.variant, a.steps, a.batch_size, a.seed, first.variant, b.steps, b.batch_size, b.seed
            )));
        }
    }
    let task = SyntheticTask::new(cfg.task)?;
    let schedule = NoiseSchedule::toy_default();
    let base = pretrain_base(&task, &schedule, &cfg.pretrain)?;
    let (w, h) = task.shape();
    let untrained = Denoiser::init(
        DenoiserConfig::small(w, h, cfg.pretrain.hidden, schedule.num_timesteps, task.num_glyphs()),
        seed::derive_seed(cfg.seed, &[0x0a7e]),
    );
    let eval_seed = seed::derive_seed(cfg.seed, &[0xe1a1]);
    let evaluate = |m: &Denoiser| {
        let g = DenoiserGenerator {
            model: m,
            sampler: cfg.sampler,
            schedule: &schedule,
        };
        evaluate_target_accuracy(&g, &task, cfg.eval_samples, eval_seed, cfg.workers)
    };
    let specs = pair_specs(&task, cfg.num_pairs, seed::derive_seed(cfg.seed, &[0x9a1e]));
    let mut variants = Vec::with_capacity(runs.len());
    let mut trained = Vec::with_capacity(runs.len());
    for run in runs {
        let pairs = build_pairs(&task, &specs, run.variant.pair_kind())?;
        let dir = out_dir.map(|d| d.join(run.variant.name()));
        let out = train(run.variant, &pairs, &base, &schedule, &run.train, dir.as_deref())?;
        let acc = evaluate(&out.model)?;
        let fractions: Vec<f64> = out.trace.iter().filter_map(|r| r.bg_fraction).collect();
        let mut res = ModelResult::from_accuracy(run.variant.name(), &acc);
        if !fractions.is_empty() {
            res.mean_bg_fraction = Some(fractions.iter().sum::<f64>() / fractions.len() as f64);
            res.max_far_bg_residual = Some(out.trace.iter().filter_map(|r| r.far_bg_residual).fold(0.0, f64::max));
        }
        res.final_loss = out.trace.last().map(|r| r.loss);
        variants.push(res);
        trained.push((run.variant.name().to_string(), out.model));
    }
    let diag_specs = pair_specs(&task, cfg.diag_pairs, seed::derive_seed(cfg.seed, &[0xd1a9]));
    let bg_fraction = compare_bg_fraction(
        &base,
        &task,
        &diag_specs,
        &schedule,
        first.train.halo_radius,
        seed::derive_seed(cfg.seed, &[0xd1a7]),
        cfg.workers,
    )?;
    let report = ComparisonReport {
        config: cfg.clone(),
        runs: runs.to_vec(),
        untrained: ModelResult::from_accuracy("untrained", &evaluate(&untrained)?),
        base: ModelResult::from_accuracy("base", &evaluate(&base)?),
        variants,
        bg_fraction,
    };
    if let Some(dir) = out_dir {
        fsutil::write_json(&dir.join("comparison.json"), &report)?;
    }
    let mut models = vec![("untrained".to_string(), untrained), ("base".to_string(), base)];
    models.extend(trained);
    Ok(ComparisonRun { report, models })
}

/// One run per variant, all with the same training config.
pub fn matched_runs(train: TrainConfig) -> Vec<VariantRun> {
    Variant::ALL.iter().map(|&variant| VariantRun { variant, train }).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sign_test_values() {
        assert_eq!(sign_test_p(0, 10), 1.0);
        assert!((sign_test_p(10, 10) - 1.0 / 1024.0).abs() < 1e-15);
        assert!((sign_test_p(9, 10) - 11.0 / 1024.0).abs() < 1e-14);
        assert!((sign_test_p(3, 4) - 5.0 / 16.0).abs() < 1e-15);
        assert!(sign_test_p(100, 100) > 0.0);
    }

    fn tiny() -> ExperimentConfig {
        ExperimentConfig {
            task: TaskConfig {
                width: 10,
                height: 10,
                ..TaskConfig::default()
            },
            pretrain: PretrainConfig {
                hidden: 4,
                steps: 20,
                batch_size: 4,
                ..PretrainConfig::default()
            },
            sampler: SamplerConfig {
                num_inference_steps: 5,
                guidance_scale: 2.0,
            },
            num_pairs: 8,
            eval_samples: 8,
            diag_pairs: 6,
            seed: 4,
            workers: 2,
        }
    }

    #[test]
    fn mismatched_budgets_are_rejected() {
        let mut runs = matched_runs(TrainConfig {
            steps: 2,
            batch_size: 2,
            ..TrainConfig::default()
        });
        runs[1].train.steps = 3;
        assert!(matches!(compare_variants(&tiny(), &runs, None), Err(TrainError::Config(_))));
    }

    #[test]
    fn report_roundtrips_and_is_deterministic() {
        let runs = matched_runs(TrainConfig {
            steps: 3,
            batch_size: 2,
            diag_every: 1,
            ..TrainConfig::default()
        });
        let dir = tempfile::tempdir().unwrap();
        let a = compare_variants(&tiny(), &runs, Some(dir.path())).unwrap();
        let b = compare_variants(&tiny(), &runs, None).unwrap();
        assert_eq!(a, b);
        let back: ComparisonReport = fsutil::read_json(&dir.path().join("comparison.json")).unwrap();
        assert_eq!(back, a);
        assert!(a.variant(Variant::SftWinners).unwrap().mean_bg_fraction.is_none());
        assert_eq!(a.variant(Variant::Di3po).unwrap().max_far_bg_residual, Some(0.0));
        assert!(dir.path().join("di3po/trace.jsonl").exists());
        assert_eq!(a.bg_fraction.diptych_max_far_bg_residual, 0.0);
    }
}
