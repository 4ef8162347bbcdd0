//! The `gen-pairs -> filter -> train -> eval -> report` workflow over one
//! run directory.
//!
//! ```text
//! <root>/
//!   pairs/manifest.jsonl      pairs/images/<id>_{diptych,winner,loser}.png
//!   filtered/manifest.jsonl   filtered/audit.jsonl   filtered/summary.json
//!   train/base.bin            train/<variant>/{trace.jsonl,ckpt_*.bin,final.bin,summary.json}
//!   eval/prompts.jsonl        eval/<name>.json       eval/<name>_samples.jsonl
//!   report/summary.md         report/{funnel,comparison,trace}.csv
//!   logs/                     wall-clock timings (not reproducible)
//! ```

pub mod config;
pub mod eval;
pub mod report;
pub mod words;

use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use config::{ConfigError, PipelineConfig};
pub use eval::{builtin_prompts, cmd_eval, text_report, EvalPrompt, EvalReport, EvalTarget, TextEvalOptions};
pub use report::{cmd_report, FunnelStage, ReportSummary, TRACE_CSV_HEADER};

use crate::clients::http::{HttpClient, HttpImageModel, HttpOcr, HttpTextModel, HttpVerifier};
use crate::clients::mock::{CorruptionKnobs, MockImageModel, MockOcr, MockTextModel, MockVerifier};
use crate::clients::{ClientError, ImageModel, Ocr, TextModel, Verifier};
use crate::clock::LogicalClock;
use crate::denoiser::{sidecar_path, Denoiser};
use crate::experiments::train::parallel_map;
use crate::experiments::{build_pairs, pretrain_base, train, PairSpec, SyntheticTask, TrainError, Variant};
use crate::diffusion::NoiseSchedule;
use crate::filter::{filter_dataset, AuditDecision, AuditEntry, FilterOptions};
use crate::pairgen::prompts::{compose_background_request, compose_diptych_prompt, parse_background_response, Orientation};
use crate::pairgen::{make_misspelling, split_diptych, PairRecord, RecordStatus, SplitParams};
use crate::raster::RgbImage;
use crate::{fsutil, seed};

/// Failure classes with stable exit codes.
#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    /// Bad flags, bad config or missing prerequisite artifacts.
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Fatal(String),
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Usage(_) => 1,
            PipelineError::Fatal(_) => 3,
        }
    }
}

impl From<ConfigError> for PipelineError {
    fn from(e: ConfigError) -> Self {
        PipelineError::Usage(e.to_string())
    }
}

impl From<std::io::Error> for PipelineError {
    fn from(e: std::io::Error) -> Self {
        PipelineError::Fatal(format!("io error: {e}"))
    }
}

pub type Result<T> = std::result::Result<T, PipelineError>;

pub const EXIT_OK: i32 = 0;
pub const EXIT_PARTIAL: i32 = 2;

/// Fixed paths inside a run directory.
#[derive(Debug, Clone)]
pub struct RunLayout {
    pub root: PathBuf,
}

impl RunLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }
    pub fn pairs_dir(&self) -> PathBuf {
        self.root.join("pairs")
    }
    pub fn pairs_manifest(&self) -> PathBuf {
        self.pairs_dir().join("manifest.jsonl")
    }
    pub fn filtered_dir(&self) -> PathBuf {
        self.root.join("filtered")
    }
    pub fn filtered_manifest(&self) -> PathBuf {
        self.filtered_dir().join("manifest.jsonl")
    }
    pub fn audit_log(&self) -> PathBuf {
        self.filtered_dir().join("audit.jsonl")
    }
    pub fn filter_summary(&self) -> PathBuf {
        self.filtered_dir().join("summary.json")
    }
    pub fn train_root(&self) -> PathBuf {
        self.root.join("train")
    }
    pub fn base_checkpoint(&self) -> PathBuf {
        self.train_root().join("base.bin")
    }
    pub fn train_dir(&self, v: Variant) -> PathBuf {
        self.train_root().join(v.name())
    }
    pub fn eval_dir(&self) -> PathBuf {
        self.root.join("eval")
    }
    pub fn prompts_file(&self) -> PathBuf {
        self.eval_dir().join("prompts.jsonl")
    }
    pub fn eval_report(&self, name: &str) -> PathBuf {
        self.eval_dir().join(format!("{name}.json"))
    }
    pub fn eval_samples(&self, name: &str) -> PathBuf {
        self.eval_dir().join(format!("{name}_samples.jsonl"))
    }
    pub fn report_dir(&self) -> PathBuf {
        self.root.join("report")
    }
    pub fn logs_dir(&self) -> PathBuf {
        self.root.join("logs")
    }
}

/// The four service clients, mock or HTTP per config.
pub struct Services {
    pub text: Box<dyn TextModel>,
    pub image: Box<dyn ImageModel>,
    pub verifier: Box<dyn Verifier>,
    pub ocr: Box<dyn Ocr>,
}

impl Services {
    pub fn from_config(cfg: &PipelineConfig) -> Result<Self> {
        let http = |c: &crate::clients::ClientConfig| {
            HttpClient::new(c.clone()).map_err(|e| PipelineError::Usage(e.to_string()))
        };
        let c = &cfg.clients;
        let mock_seed = |tag: u64, own: u64| seed::derive_seed(cfg.seed, &[tag, own]);
        let text: Box<dyn TextModel> = if c.text.mock {
            Box::new(MockTextModel {
                seed: mock_seed(0x7e, c.text.mock_seed),
            })
        } else {
            Box::new(HttpTextModel(http(&c.text)?))
        };
        let image: Box<dyn ImageModel> = if c.image.mock {
            Box::new(MockImageModel {
                knobs: CorruptionKnobs {
                    force: None,
                    rate: cfg.mock.corruption_rate,
                    kinds: cfg.mock.corruption_kinds.clone(),
                },
                ..MockImageModel::default()
            })
        } else {
            Box::new(HttpImageModel(http(&c.image)?))
        };
        let verifier: Box<dyn Verifier> = if c.verifier.mock {
            Box::new(MockVerifier::default())
        } else {
            Box::new(HttpVerifier(http(&c.verifier)?))
        };
        let ocr: Box<dyn Ocr> = if c.ocr.mock {
            Box::new(MockOcr {
                seed: mock_seed(0x0c, c.ocr.mock_seed),
                noise: cfg.mock.ocr_noise,
            })
        } else {
            Box::new(HttpOcr(http(&c.ocr)?))
        };
        Ok(Self { text, image, verifier, ocr })
    }
}

pub fn pair_id(index: usize) -> String {
    format!("pair-{index:05}")
}

/// Seed passed to the image service for record `index`.
pub fn image_seed(master: u64, index: usize) -> u64 {
    seed::derive_seed(master, &[0x1a6e, index as u64])
}

fn record_seed(master: u64, index: usize) -> u64 {
    seed::derive_seed(master, &[0x9e4, index as u64])
}

pub fn seed_words(cfg: &PipelineConfig) -> Vec<String> {
    if cfg.words.is_empty() {
        words::SEED_WORDS.iter().map(|w| w.to_string()).collect()
    } else {
        cfg.words.clone()
    }
}

/// Counts from one `gen-pairs` run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenSummary {
    pub total: usize,
    pub ok: usize,
    pub failed: usize,
    /// Completed records kept from an earlier run.
    pub reused: usize,
}

impl GenSummary {
    /// More than half the records failed.
    pub fn is_partial(&self) -> bool {
        self.failed * 2 > self.total
    }
}

fn failed_record(id: String, word_pair: crate::pairgen::WordPair, orientation: Orientation, msg: String) -> PairRecord {
    PairRecord {
        id,
        word_pair,
        background: String::new(),
        diptych_prompt: String::new(),
        orientation,
        diptych_path: String::new(),
        winner_path: String::new(),
        loser_path: String::new(),
        split: None,
        status: RecordStatus::Error,
        error: Some(msg),
    }
}

/// Requests a background description, retrying empty or unparseable
/// answers and retryable client errors up to `attempts` times.
fn request_background(text: &dyn TextModel, prompt: &str, attempts: u32) -> std::result::Result<String, String> {
    let mut last = String::from("no attempts made");
    for _ in 0..attempts {
        match text.generate(prompt) {
            Ok(answer) => match parse_background_response(&answer) {
                Some(bg) => return Ok(bg),
                None => last = "empty or malformed background response".into(),
            },
            Err(e) if e.is_retryable() => last = e.to_string(),
            Err(e) => return Err(e.to_string()),
        }
    }
    Err(format!("background request failed after {attempts} attempts: {last}"))
}

fn generate_record(cfg: &PipelineConfig, services: &Services, words: &[String], index: usize, pairs_dir: &Path) -> PairRecord {
    let id = pair_id(index);
    let rs = record_seed(cfg.seed, index);
    let word = &words[index % words.len()];
    let word_pair = match make_misspelling(word, cfg.misspell_rate, seed::derive_seed(rs, &[1])) {
        Ok(p) => p,
        Err(e) => {
            let empty = crate::pairgen::WordPair {
                correct: word.clone(),
                misspelled: String::new(),
                edits: Vec::new(),
            };
            return failed_record(id, empty, Orientation::LeftCorrect, e.to_string());
        }
    };
    let orientation = if seed::rng_from(rs, &[2]).random_bool(0.5) {
        Orientation::LeftCorrect
    } else {
        Orientation::RightCorrect
    };
    let background = match request_background(services.text.as_ref(), &compose_background_request(&word_pair), cfg.background_attempts) {
        Ok(b) => b,
        Err(msg) => return failed_record(id, word_pair, orientation, msg),
    };
    let prompt = match compose_diptych_prompt(&background, &word_pair, orientation) {
        Ok(p) => p,
        Err(e) => return failed_record(id, word_pair, orientation, e.to_string()),
    };
    let produce = || -> std::result::Result<(RgbImage, crate::pairgen::Split), String> {
        let img = services
            .image
            .generate_diptych(&prompt, image_seed(cfg.seed, index))
            .map_err(|e: ClientError| e.to_string())?;
        let split = split_diptych(&img, &SplitParams::default()).map_err(|e| e.to_string())?;
        Ok((img, split))
    };
    let (img, split) = match produce() {
        Ok(v) => v,
        Err(msg) => {
            let mut r = failed_record(id, word_pair, orientation, msg);
            r.background = background;
            r.diptych_prompt = prompt;
            return r;
        }
    };
    let (winner, loser) = match orientation {
        Orientation::LeftCorrect => (&split.left, &split.right),
        Orientation::RightCorrect => (&split.right, &split.left),
    };
    let rel = |kind: &str| format!("images/{id}_{kind}.png");
    let save = |im: &RgbImage, kind: &str| im.save_png(&pairs_dir.join(rel(kind))).map_err(|e| e.to_string());
    if let Err(msg) = save(&img, "diptych").and(save(winner, "winner")).and(save(loser, "loser")) {
        return failed_record(id, word_pair, orientation, msg);
    }
    PairRecord {
        diptych_path: rel("diptych"),
        winner_path: rel("winner"),
        loser_path: rel("loser"),
        id,
        word_pair,
        background,
        diptych_prompt: prompt,
        orientation,
        split: Some(split.meta),
        status: RecordStatus::Ok,
        error: None,
    }
}

fn is_complete(r: &PairRecord, pairs_dir: &Path) -> bool {
    r.is_ok()
        && [&r.diptych_path, &r.winner_path, &r.loser_path]
            .iter()
            .all(|p| pairs_dir.join(p).is_file())
}

/// Generates `cfg.count` pair records. Completed records already in the
/// manifest are kept untouched; the manifest is rewritten after every
/// chunk so an interrupted run resumes where it stopped.
pub fn cmd_gen_pairs(cfg: &PipelineConfig, services: &Services) -> Result<GenSummary> {
    let layout = RunLayout::new(&cfg.root);
    let pairs_dir = layout.pairs_dir();
    std::fs::create_dir_all(pairs_dir.join("images"))?;
    let existing: Vec<PairRecord> = if layout.pairs_manifest().exists() {
        fsutil::read_jsonl(&layout.pairs_manifest())?
    } else {
        Vec::new()
    };
    let previous: std::collections::HashMap<String, PairRecord> =
        existing.into_iter().map(|r| (r.id.clone(), r)).collect();
    let words = seed_words(cfg);
    let mut records: Vec<PairRecord> = Vec::with_capacity(cfg.count);
    let mut reused = 0;
    let chunk = cfg.workers.max(1) * 8;
    let mut start = 0;
    while start < cfg.count {
        let end = (start + chunk).min(cfg.count);
        let produced = parallel_map(end - start, cfg.workers, |k| {
            let i = start + k;
            match previous.get(&pair_id(i)) {
                Some(r) if is_complete(r, &pairs_dir) => (r.clone(), true),
                _ => (generate_record(cfg, services, &words, i, &pairs_dir), false),
            }
        });
        for (r, kept) in produced {
            reused += kept as usize;
            records.push(r);
        }
        fsutil::write_jsonl(&layout.pairs_manifest(), &records)?;
        start = end;
    }
    let ok = records.iter().filter(|r| r.is_ok()).count();
    Ok(GenSummary {
        total: records.len(),
        ok,
        failed: records.len() - ok,
        reused,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterSummary {
    pub total: usize,
    pub accepted: usize,
    pub rejected: usize,
    pub errors: usize,
    pub threshold: i64,
}

impl FilterSummary {
    pub fn is_partial(&self) -> bool {
        self.errors > 0
    }
}

pub fn read_manifest(path: &Path, what: &str) -> Result<Vec<PairRecord>> {
    if !path.exists() {
        return Err(PipelineError::Usage(format!("{what} not found at {}", path.display())));
    }
    Ok(fsutil::read_jsonl(path)?)
}

/// Verifies and gates every record of the pair manifest.
pub fn cmd_filter(cfg: &PipelineConfig, services: &Services) -> Result<FilterSummary> {
    let layout = RunLayout::new(&cfg.root);
    let records = read_manifest(&layout.pairs_manifest(), "pair manifest")?;
    let opts = FilterOptions {
        threshold: cfg.threshold,
        max_retries: cfg.clients.verifier.max_retries,
        workers: cfg.workers.max(1),
    };
    let outcome = filter_dataset(&records, &layout.pairs_dir(), services.verifier.as_ref(), opts, &LogicalClock::default());
    std::fs::create_dir_all(layout.filtered_dir())?;
    // Accepted records keep paths relative to pairs/.
    fsutil::write_jsonl(&layout.filtered_manifest(), &outcome.accepted)?;
    fsutil::write_jsonl::<AuditEntry>(&layout.audit_log(), &outcome.audit)?;
    let summary = FilterSummary {
        total: records.len(),
        accepted: outcome.count(AuditDecision::Accepted),
        rejected: outcome.count(AuditDecision::Rejected),
        errors: outcome.count(AuditDecision::Error),
        threshold: cfg.threshold,
    };
    fsutil::write_json(&layout.filter_summary(), &summary)?;
    Ok(summary)
}

/// Maps an accepted record onto the synthetic task: the word picks the
/// glyph and the background description picks the background.
pub fn record_spec(master: u64, task: &SyntheticTask, r: &PairRecord) -> PairSpec {
    PairSpec {
        bg_seed: seed::derive_seed(master, &[0xb5ec, seed::stable_hash(r.background.as_bytes()), seed::stable_hash(r.id.as_bytes())]),
        glyph: (seed::stable_hash(r.word_pair.correct.as_bytes()) % task.num_glyphs() as u64) as usize,
    }
}

/// Loads `train/base.bin` when it was produced under the same task and
/// pretraining settings, and pretrains (and saves) it otherwise.
pub fn load_or_pretrain_base(cfg: &PipelineConfig, task: &SyntheticTask, schedule: &NoiseSchedule) -> Result<Denoiser> {
    let path = RunLayout::new(&cfg.root).base_checkpoint();
    let key = serde_json::json!({ "task": cfg.task, "pretrain": cfg.pretrain });
    if path.exists() {
        let sidecar: serde_json::Value = fsutil::read_json(&sidecar_path(&path))?;
        if sidecar.get("extra") == Some(&key) {
            return Ok(Denoiser::load_checkpoint(&path)?);
        }
    }
    let base = pretrain_base(task, schedule, &cfg.pretrain).map_err(|e| PipelineError::Fatal(e.to_string()))?;
    base.save_checkpoint(&path, key)?;
    Ok(base)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub variant: Variant,
    pub pairs: usize,
    pub steps: usize,
    pub final_loss: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub max_far_bg_residual: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mean_bg_fraction: Option<f64>,
    pub trace: String,
    pub final_checkpoint: String,
}

/// Fine-tunes the base model on the filtered pairs with one variant.
pub fn cmd_train(cfg: &PipelineConfig, variant: Variant) -> Result<TrainSummary> {
    let layout = RunLayout::new(&cfg.root);
    let records = read_manifest(&layout.filtered_manifest(), "filtered manifest")?;
    if records.is_empty() {
        return Err(PipelineError::Usage("filtered manifest is empty; nothing to train on".into()));
    }
    let task = SyntheticTask::new(cfg.task).map_err(|e| PipelineError::Usage(e.to_string()))?;
    let schedule = NoiseSchedule::toy_default();
    let specs: Vec<PairSpec> = records.iter().map(|r| record_spec(cfg.seed, &task, r)).collect();
    let pairs = build_pairs(&task, &specs, variant.pair_kind()).map_err(|e| PipelineError::Fatal(e.to_string()))?;
    let base = load_or_pretrain_base(cfg, &task, &schedule)?;
    let dir = layout.train_dir(variant);
    let out = match train(variant, &pairs, &base, &schedule, &cfg.train, Some(&dir)) {
        Ok(o) => o,
        Err(TrainError::Diverged { step, loss }) => {
            let dump = serde_json::json!({ "variant": variant, "step": step, "loss": loss.to_string(), "train": cfg.train });
            fsutil::write_json(&dir.join("divergence.json"), &dump)?;
            return Err(PipelineError::Fatal(format!("{variant} diverged at step {step} (loss {loss})")));
        }
        Err(TrainError::Config(m)) => return Err(PipelineError::Usage(m)),
        Err(e) => return Err(PipelineError::Fatal(e.to_string())),
    };
    let fractions: Vec<f64> = out.trace.iter().filter_map(|r| r.bg_fraction).collect();
    let summary = TrainSummary {
        variant,
        pairs: pairs.len(),
        steps: cfg.train.steps,
        final_loss: out.trace.last().map(|r| r.loss).unwrap_or(0.0),
        max_far_bg_residual: variant
            .is_dpo()
            .then(|| out.trace.iter().filter_map(|r| r.far_bg_residual).fold(0.0, f64::max)),
        mean_bg_fraction: (!fractions.is_empty()).then(|| fractions.iter().sum::<f64>() / fractions.len() as f64),
        trace: format!("train/{}/trace.jsonl", variant.name()),
        final_checkpoint: format!("train/{}/final.bin", variant.name()),
    };
    fsutil::write_json(&dir.join("summary.json"), &summary)?;
    Ok(summary)
}

/// Appends one wall-clock timing line under `logs/`.
pub fn log_timing(root: &Path, command: &str, wall_ms: u128) -> std::io::Result<()> {
    use std::io::Write;
    let dir = root.join("logs");
    std::fs::create_dir_all(&dir)?;
    let mut f = std::fs::OpenOptions::new().create(true).append(true).open(dir.join("timings.jsonl"))?;
    writeln!(f, "{}", serde_json::json!({ "command": command, "wall_ms": wall_ms as u64 }))
}
