//! The `eval` stage: samples a model once per character of every prompt,
//! renders what it got right or wrong as a text line, reads the line back
//! through the OCR client and aggregates the three text metrics.

use std::str::FromStr;

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{load_or_pretrain_base, seed_words, PipelineConfig, PipelineError, Result, RunLayout, Services};
use crate::denoiser::{Denoiser, DenoiserConfig};
use crate::clients::Ocr;
use crate::diffusion::{Condition, NoiseSchedule};
use crate::experiments::evaluate::sample_seed;
use crate::experiments::train::parallel_map;
use crate::experiments::{evaluate_target_accuracy, AccuracyReport, DenoiserGenerator, Generator, OracleGenerator, SyntheticTask, Variant};
use crate::font;
use crate::metrics::{aggregate_seeds, AggregateOptions, EvalRow, EvalSample, MetricReport};
use crate::raster::RgbImage;
use crate::{fsutil, seed};

/// What `eval` scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EvalTarget {
    /// A fine-tuned variant, from `train/<variant>/final.bin`.
    Variant(Variant),
    /// The pretrained starting point, `train/base.bin`.
    Base,
    /// A freshly initialised model.
    Untrained,
    /// Renders the correct motif every time.
    Oracle,
}

impl EvalTarget {
    pub fn name(self) -> &'static str {
        match self {
            EvalTarget::Variant(v) => v.name(),
            EvalTarget::Base => "base",
            EvalTarget::Untrained => "untrained",
            EvalTarget::Oracle => "oracle",
        }
    }
}

impl std::fmt::Display for EvalTarget {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EvalTarget {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "base" => Ok(EvalTarget::Base),
            "untrained" => Ok(EvalTarget::Untrained),
            "oracle" => Ok(EvalTarget::Oracle),
            _ => s.parse::<Variant>().map(EvalTarget::Variant).map_err(|_| {
                format!("unknown model {s:?}; expected di3po, sft_winners, dpo_background_varied, base, untrained or oracle")
            }),
        }
    }
}

/// One line of `eval/prompts.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalPrompt {
    pub prompt_id: String,
    /// Ordered text spans; a prompt without any is skipped.
    #[serde(default)]
    pub ground_truth: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub prompts: usize,
    /// Prompts skipped for lacking ground truth.
    pub skipped: Vec<String>,
    pub metrics: MetricReport,
    pub accuracy: AccuracySummary,
}

/// [`AccuracyReport`] without the per-sample outcomes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracySummary {
    pub n: usize,
    pub overall: f64,
    pub half_width: f64,
    pub per_glyph: Vec<f64>,
}

impl From<&AccuracyReport> for AccuracySummary {
    fn from(r: &AccuracyReport) -> Self {
        Self {
            n: r.n,
            overall: r.overall,
            half_width: r.half_width,
            per_glyph: r.per_glyph.clone(),
        }
    }
}

/// `count` prompts of one or two spans drawn from the seed words.
pub fn builtin_prompts(words: &[String], count: usize, rng_seed: u64) -> Vec<EvalPrompt> {
    let mut rng = seed::rng_from(rng_seed, &[0xe7a1, 0x9]);
    (0..count)
        .map(|i| {
            let spans = if rng.random_bool(0.5) { 1 } else { 2 };
            EvalPrompt {
                prompt_id: format!("prompt-{i:04}"),
                ground_truth: (0..spans).map(|_| words.choose(&mut rng).expect("non-empty words").clone()).collect(),
            }
        })
        .collect()
}

/// Glyph class used when sampling character `c`.
pub fn glyph_for(c: char, num_glyphs: usize) -> usize {
    font::alphabet().position(|a| a == c).unwrap_or(0) % num_glyphs
}

/// The character shown in place of `c` when its sample is wrong.
pub fn confusion(c: char) -> char {
    let alphabet: Vec<char> = font::alphabet().filter(|&a| a != ' ').collect();
    match alphabet.iter().position(|&a| a == c) {
        Some(i) => alphabet[(i + 1) % alphabet.len()],
        None => c,
    }
}

/// Black text on white with a two-pixel margin.
pub fn render_line(text: &str) -> RgbImage {
    let mut img = RgbImage::filled(font::text_width(text) + 4, font::GLYPH_H + 4, [255, 255, 255]);
    font::render_text(&mut img, text, 2, 2, font::INK);
    img
}

/// Renders `reference` with every character whose sample missed replaced
/// by its confusion character.
pub fn sample_text(generator: &dyn Generator, task: &SyntheticTask, reference: &str, rng_seed: u64) -> crate::diffusion::Result<String> {
    reference
        .chars()
        .enumerate()
        .map(|(j, c)| {
            if c == ' ' {
                return Ok(c);
            }
            let glyph = glyph_for(c, task.num_glyphs());
            let img = generator.generate(Condition::token(glyph as u32), seed::derive_seed(rng_seed, &[j as u64]))?;
            Ok(if task.is_correct(&img, glyph)? { c } else { confusion(c) })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TextEvalOptions {
    /// Sampling seeds per prompt.
    pub n: usize,
    pub replicas: usize,
    pub normalize: bool,
    pub rng_seed: u64,
    pub workers: usize,
}

/// Samples every prompt `n` times, reads each rendering back through `ocr`
/// and aggregates Average and BoN over the seeds.
pub fn text_report(
    generator: &dyn Generator,
    task: &SyntheticTask,
    prompts: &[&EvalPrompt],
    ocr: &dyn Ocr,
    opts: TextEvalOptions,
) -> Result<(MetricReport, Vec<EvalRow>)> {
    let n = opts.n;
    let jobs: Vec<(usize, u64)> = (0..prompts.len())
        .flat_map(|p| (0..n).map(move |s| (p, sample_seed(seed::derive_seed(opts.rng_seed, &[0xe7a1, p as u64]), s))))
        .collect();
    let readings = parallel_map(jobs.len(), opts.workers, |k| -> Result<String> {
        let (p, s) = jobs[k];
        let reference = prompts[p].ground_truth.join(" ");
        let shown = sample_text(generator, task, &reference, s).map_err(|e| PipelineError::Fatal(e.to_string()))?;
        ocr.read(&render_line(&shown))
            .map_err(|e| PipelineError::Fatal(format!("ocr failed for {}: {e}", prompts[p].prompt_id)))
    })
    .into_iter()
    .collect::<Result<Vec<String>>>()?;

    let rows: Vec<EvalRow> = jobs
        .iter()
        .zip(readings)
        .map(|(&(p, s), ocr_text)| EvalRow {
            prompt_id: prompts[p].prompt_id.clone(),
            ground_truth: prompts[p].ground_truth.clone(),
            seed: s,
            ocr_text,
        })
        .collect();
    let samples: Vec<EvalSample> = crate::metrics::samples_from_rows(&rows);
    let metrics = aggregate_seeds(
        &samples,
        AggregateOptions {
            n,
            replicas: opts.replicas,
            rng_seed: seed::derive_seed(opts.rng_seed, &[0xa66]),
            normalize: opts.normalize,
        },
    )
    .map_err(|e| PipelineError::Fatal(e.to_string()))?;
    Ok((metrics, rows))
}

fn load_prompts(cfg: &PipelineConfig, layout: &RunLayout) -> Result<Vec<EvalPrompt>> {
    let path = layout.prompts_file();
    if path.exists() {
        return Ok(fsutil::read_jsonl(&path)?);
    }
    let prompts = builtin_prompts(&seed_words(cfg), cfg.eval.prompts, cfg.seed);
    fsutil::write_jsonl(&path, &prompts)?;
    Ok(prompts)
}

fn load_model(cfg: &PipelineConfig, target: EvalTarget, task: &SyntheticTask, schedule: &NoiseSchedule) -> Result<Option<Denoiser>> {
    let layout = RunLayout::new(&cfg.root);
    Ok(match target {
        EvalTarget::Oracle => None,
        EvalTarget::Untrained => {
            let (w, h) = task.shape();
            let dcfg = DenoiserConfig::small(w, h, cfg.pretrain.hidden, schedule.num_timesteps, task.num_glyphs());
            Some(Denoiser::init(dcfg, seed::derive_seed(cfg.pretrain.seed, &[0x1417])))
        }
        EvalTarget::Base => Some(load_or_pretrain_base(cfg, task, schedule)?),
        EvalTarget::Variant(v) => {
            let p = layout.train_dir(v).join("final.bin");
            if !p.exists() {
                return Err(PipelineError::Usage(format!("no trained model at {}; run `train --variant {v}` first", p.display())));
            }
            Some(Denoiser::load_checkpoint(&p)?)
        }
    })
}

/// Scores one model. Writes `eval/<name>.json` and `eval/<name>_samples.jsonl`.
pub fn cmd_eval(cfg: &PipelineConfig, services: &Services, target: EvalTarget) -> Result<EvalReport> {
    let layout = RunLayout::new(&cfg.root);
    std::fs::create_dir_all(layout.eval_dir())?;
    let task = SyntheticTask::new(cfg.task).map_err(|e| PipelineError::Usage(e.to_string()))?;
    let schedule = NoiseSchedule::toy_default();
    let model = load_model(cfg, target, &task, &schedule)?;
    let oracle = OracleGenerator { task: &task, correct: true };
    let sampler;
    let generator: &dyn Generator = match &model {
        Some(m) => {
            sampler = DenoiserGenerator {
                model: m,
                sampler: cfg.eval.sampler,
                schedule: &schedule,
            };
            &sampler
        }
        None => &oracle,
    };

    let prompts = load_prompts(cfg, &layout)?;
    let (kept, skipped): (Vec<&EvalPrompt>, Vec<&EvalPrompt>) =
        prompts.iter().partition(|p| p.ground_truth.iter().any(|s| !s.trim().is_empty()));
    if kept.is_empty() {
        return Err(PipelineError::Usage("no evaluation prompt has ground truth".into()));
    }
    let opts = TextEvalOptions {
        n: cfg.eval.n,
        replicas: cfg.eval.replicas,
        normalize: cfg.eval.normalize,
        rng_seed: cfg.seed,
        workers: cfg.workers,
    };
    let (metrics, rows) = text_report(generator, &task, &kept, services.ocr.as_ref(), opts)?;
    let accuracy = evaluate_target_accuracy(generator, &task, cfg.eval.accuracy_samples, seed::derive_seed(cfg.seed, &[0xacc]), cfg.workers)
        .map_err(|e| PipelineError::Fatal(e.to_string()))?;

    let report = EvalReport {
        model: target.name().to_string(),
        prompts: kept.len(),
        skipped: skipped.iter().map(|p| p.prompt_id.clone()).collect(),
        metrics,
        accuracy: (&accuracy).into(),
    };
    fsutil::write_jsonl(&layout.eval_samples(target.name()), &rows)?;
    fsutil::write_json(&layout.eval_report(target.name()), &report)?;
    Ok(report)
}
