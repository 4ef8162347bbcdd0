//! Text-rendering accuracy metrics, per-seed aggregation and bootstrap
//! confidence intervals.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::seed;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricError {
    #[error("reference text is empty")]
    EmptyReference,
    #[error("prompt {prompt_id} has {have} seeds, {need} required")]
    InsufficientSeeds {
        prompt_id: String,
        have: usize,
        need: usize,
    },
    #[error("no values to aggregate")]
    Empty,
    #[error("n must be at least 1")]
    ZeroN,
    #[error("prompt {0} has duplicate seed ids")]
    DuplicateSeeds(String),
}

pub type Result<T> = std::result::Result<T, MetricError>;

/// Lowercases, keeps apostrophes only between two alphanumerics, turns all
/// other non-alphanumerics into spaces and collapses whitespace.
pub fn normalize_text(s: &str) -> String {
    let lower: Vec<char> = s.chars().flat_map(char::to_lowercase).collect();
    let mut out = String::with_capacity(lower.len());
    for (i, &c) in lower.iter().enumerate() {
        let keep = c.is_alphanumeric()
            || ((c == '\'' || c == '\u{2019}')
                && i > 0
                && i + 1 < lower.len()
                && lower[i - 1].is_alphanumeric()
                && lower[i + 1].is_alphanumeric());
        out.push(if keep { c } else { ' ' });
    }
    out.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Unit-cost edit distance over arbitrary sequences.
pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn levenshtein_str(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    levenshtein(&a, &b)
}

/// `1 - d / max(len)` over characters; 1 when both are empty.
pub fn edit_similarity(hyp: &str, reference: &str) -> f64 {
    let (h, r): (Vec<char>, Vec<char>) = (hyp.chars().collect(), reference.chars().collect());
    let m = h.len().max(r.len());
    if m == 0 {
        return 1.0;
    }
    (m - levenshtein(&h, &r)) as f64 / m as f64
}

/// Word-level edit distance divided by the reference word count. Words are
/// whitespace-separated. Not clamped: insertions can push it above 1.
pub fn word_error_rate(hyp: &str, reference: &str) -> Result<f64> {
    let r: Vec<&str> = reference.split_whitespace().collect();
    if r.is_empty() {
        return Err(MetricError::EmptyReference);
    }
    let h: Vec<&str> = hyp.split_whitespace().collect();
    Ok(levenshtein(&h, &r) as f64 / r.len() as f64)
}

/// Fraction of reference words occurring as contiguous substrings of the
/// hypothesis.
pub fn substring_match_ratio(hyp: &str, reference: &str) -> Result<f64> {
    let r: Vec<&str> = reference.split_whitespace().collect();
    if r.is_empty() {
        return Err(MetricError::EmptyReference);
    }
    Ok(r.iter().filter(|w| hyp.contains(*w)).count() as f64 / r.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeedScores {
    pub edit_similarity: f64,
    pub wer: f64,
    pub substring_ratio: f64,
}

/// All three metrics for one OCR reading, optionally after normalization.
pub fn score(hyp: &str, reference: &str, normalize: bool) -> Result<SeedScores> {
    let (h, r) = if normalize {
        (normalize_text(hyp), normalize_text(reference))
    } else {
        (hyp.to_string(), reference.to_string())
    };
    Ok(SeedScores {
        edit_similarity: edit_similarity(&h, &r),
        wer: word_error_rate(&h, &r)?,
        substring_ratio: substring_match_ratio(&h, &r)?,
    })
}

/// One prompt's ground truth and its OCR readings across sampling seeds.
/// Ground truth is an ordered list of spans joined with single spaces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSample {
    pub prompt_id: String,
    pub ground_truth: Vec<String>,
    pub seeds: Vec<u64>,
    pub ocr_texts: Vec<String>,
}

impl EvalSample {
    pub fn reference(&self) -> String {
        self.ground_truth.join(" ")
    }
}

/// One line of the evaluation input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub prompt_id: String,
    pub ground_truth: Vec<String>,
    pub seed: u64,
    pub ocr_text: String,
}

/// Groups rows by prompt, keeping first-seen prompt order and row order.
pub fn samples_from_rows(rows: &[EvalRow]) -> Vec<EvalSample> {
    let mut order: Vec<String> = Vec::new();
    let mut by_id: BTreeMap<String, EvalSample> = BTreeMap::new();
    for r in rows {
        let s = by_id.entry(r.prompt_id.clone()).or_insert_with(|| {
            order.push(r.prompt_id.clone());
            EvalSample {
                prompt_id: r.prompt_id.clone(),
                ground_truth: r.ground_truth.clone(),
                seeds: Vec::new(),
                ocr_texts: Vec::new(),
            }
        });
        s.seeds.push(r.seed);
        s.ocr_texts.push(r.ocr_text.clone());
    }
    order.into_iter().map(|id| by_id.remove(&id).unwrap()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub mean: f64,
    /// Standard deviation of the replica means (bootstrap standard error).
    pub half_width: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub replicas: usize,
}

pub const DEFAULT_REPLICAS: usize = 1000;

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Nonparametric bootstrap of the mean. Replica `r` resamples with
/// replacement from its own stream derived from `(rng_seed, r)`. The
/// interval is the 2.5/97.5 percentile range of the replica means.
pub fn bootstrap_ci(values: &[f64], replicas: usize, rng_seed: u64) -> Result<BootstrapResult> {
    if values.is_empty() || replicas == 0 {
        return Err(MetricError::Empty);
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let mut means = Vec::with_capacity(replicas);
    let (mut m, mut m2) = (0.0, 0.0);
    for r in 0..replicas {
        let mut rng = seed::rng_from(rng_seed, &[r as u64]);
        let s: f64 = (0..n).map(|_| values[rng.random_range(0..n)]).sum();
        let x = s / n as f64;
        means.push(x);
        let d = x - m;
        m += d / (r + 1) as f64;
        m2 += d * (x - m);
    }
    let sd = if replicas > 1 {
        (m2 / (replicas - 1) as f64).sqrt()
    } else {
        0.0
    };
    means.sort_by(f64::total_cmp);
    Ok(BootstrapResult {
        mean,
        half_width: sd,
        ci_low: quantile(&means, 0.025),
        ci_high: quantile(&means, 0.975),
        replicas,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub average: BootstrapResult,
    pub bon: BootstrapResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptScores {
    pub prompt_id: String,
    pub per_seed: Vec<SeedScores>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub n: usize,
    pub normalized: bool,
    pub per_prompt: Vec<PromptScores>,
    pub edit_similarity: Aggregate,
    pub wer: Aggregate,
    pub substring_ratio: Aggregate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregateOptions {
    pub n: usize,
    pub replicas: usize,
    pub rng_seed: u64,
    pub normalize: bool,
}

impl Default for AggregateOptions {
    fn default() -> Self {
        Self {
            n: 4,
            replicas: DEFAULT_REPLICAS,
            rng_seed: 0,
            normalize: true,
        }
    }
}

/// Average and Best-of-n over the first `n` seeds of every sample.
///
/// Average is the mean over prompts of each prompt's seed mean. BoN is the
/// mean over prompts of each prompt's best seed: the maximum for edit
/// similarity and substring ratio, the minimum for WER. Bootstrap
/// resampling is over prompts.
pub fn aggregate_seeds(samples: &[EvalSample], opts: AggregateOptions) -> Result<MetricReport> {
    if opts.n == 0 {
        return Err(MetricError::ZeroN);
    }
    if samples.is_empty() {
        return Err(MetricError::Empty);
    }
    let mut per_prompt = Vec::with_capacity(samples.len());
    for s in samples {
        let have = s.ocr_texts.len().min(s.seeds.len());
        if have < opts.n {
            return Err(MetricError::InsufficientSeeds {
                prompt_id: s.prompt_id.clone(),
                have,
                need: opts.n,
            });
        }
        let mut ids = s.seeds.clone();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != s.seeds.len() {
            return Err(MetricError::DuplicateSeeds(s.prompt_id.clone()));
        }
        let reference = s.reference();
        let per_seed = s.ocr_texts[..opts.n]
            .iter()
            .map(|h| score(h, &reference, opts.normalize))
            .collect::<Result<Vec<_>>>()?;
        per_prompt.push(PromptScores {
            prompt_id: s.prompt_id.clone(),
            per_seed,
        });
    }
    let agg = |get: fn(&SeedScores) -> f64, higher_is_better: bool, tag: u64| -> Result<Aggregate> {
        let mut avg = Vec::with_capacity(per_prompt.len());
        let mut best = Vec::with_capacity(per_prompt.len());
        for p in &per_prompt {
            let v: Vec<f64> = p.per_seed.iter().map(get).collect();
            avg.push(v.iter().sum::<f64>() / v.len() as f64);
            best.push(if higher_is_better {
                v.iter().copied().fold(f64::NEG_INFINITY, f64::max)
            } else {
                v.iter().copied().fold(f64::INFINITY, f64::min)
            });
        }
        Ok(Aggregate {
            average: bootstrap_ci(&avg, opts.replicas, seed::derive_seed(opts.rng_seed, &[tag, 0]))?,
            bon: bootstrap_ci(&best, opts.replicas, seed::derive_seed(opts.rng_seed, &[tag, 1]))?,
        })
    };
    Ok(MetricReport {
        n: opts.n,
        normalized: opts.normalize,
        edit_similarity: agg(|s| s.edit_similarity, true, 1)?,
        wer: agg(|s| s.wer, false, 2)?,
        substring_ratio: agg(|s| s.substring_ratio, true, 3)?,
        per_prompt,
    })
}

/// Plain-text table with Average and BoN rows, `value ± half_width`.
pub fn render_table(report: &MetricReport, label: &str) -> String {
    let mut out = format!(
        "{:<24} {:>18} {:>18} {:>18}\n",
        label, "edit_similarity", "wer", "substring_ratio"
    );
    let cell = |b: &BootstrapResult| format!("{:.4} ± {:.4}", b.mean, b.half_width);
    for (name, pick) in [
        ("Average", (|a: &Aggregate| a.average) as fn(&Aggregate) -> BootstrapResult),
        ("BoN", |a: &Aggregate| a.bon),
    ] {
        out.push_str(&format!(
            "{:<24} {:>18} {:>18} {:>18}\n",
            format!("{name}({})", report.n),
            cell(&pick(&report.edit_similarity)),
            cell(&pick(&report.wer)),
            cell(&pick(&report.substring_ratio)),
        ));
    }
    out
}
