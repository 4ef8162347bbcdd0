//! The `report` stage: collects whatever earlier stages produced into a
//! markdown summary and three CSV files.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::eval::EvalReport;
use super::{FilterSummary, PipelineConfig, Result, RunLayout, TrainSummary};
use crate::experiments::{TraceRow, Variant};
use crate::fsutil;
use crate::metrics::render_table;
use crate::pairgen::PairRecord;

pub const TRACE_CSV_HEADER: &str = "step,variant,loss,far_bg_residual,bg_fraction,target_fraction";
pub const FUNNEL_CSV_HEADER: &str = "stage,count";
pub const COMPARISON_CSV_HEADER: &str = "model,accuracy,accuracy_half_width,edit_similarity_avg,edit_similarity_bon,wer_avg,wer_bon,substring_ratio_avg,substring_ratio_bon,final_loss,mean_bg_fraction,max_far_bg_residual";

/// Models listed in the comparison, in report order.
const MODELS: [&str; 6] = ["untrained", "base", "sft_winners", "dpo_background_varied", "di3po", "oracle"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunnelStage {
    pub stage: String,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub funnel: Vec<FunnelStage>,
    pub models: Vec<String>,
    /// Artifacts that were expected but not found.
    pub missing: Vec<String>,
}

impl ReportSummary {
    pub fn is_partial(&self) -> bool {
        !self.missing.is_empty()
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

fn load<T: serde::de::DeserializeOwned>(path: &std::path::Path, rel: &str, missing: &mut Vec<String>) -> Result<Option<T>> {
    if path.exists() {
        Ok(Some(fsutil::read_json(path)?))
    } else {
        missing.push(rel.to_string());
        Ok(None)
    }
}

/// Collects `logs/timings.jsonl` into `logs/run_report.json`. Wall-clock
/// data stays under `logs/` so every other artifact is reproducible.
fn write_run_timings(layout: &RunLayout) -> Result<()> {
    let path = layout.logs_dir().join("timings.jsonl");
    if !path.exists() {
        return Ok(());
    }
    let timings: Vec<serde_json::Value> = fsutil::read_jsonl(&path)?;
    let total: u64 = timings.iter().filter_map(|t| t["wall_ms"].as_u64()).sum();
    fsutil::write_json(
        &layout.logs_dir().join("run_report.json"),
        &serde_json::json!({ "commands": timings, "total_wall_ms": total }),
    )?;
    Ok(())
}

pub fn cmd_report(cfg: &PipelineConfig) -> Result<ReportSummary> {
    let layout = RunLayout::new(&cfg.root);
    let mut missing = Vec::new();

    let mut funnel: Vec<(String, usize)> = Vec::new();
    if layout.pairs_manifest().exists() {
        let recs: Vec<PairRecord> = fsutil::read_jsonl(&layout.pairs_manifest())?;
        let ok = recs.iter().filter(|r| r.is_ok()).count();
        funnel.push(("requested".into(), recs.len()));
        funnel.push(("generated".into(), ok));
        funnel.push(("generation_failed".into(), recs.len() - ok));
    } else {
        missing.push("pairs/manifest.jsonl".into());
    }
    if let Some(f) = load::<FilterSummary>(&layout.filter_summary(), "filtered/summary.json", &mut missing)? {
        funnel.push(("accepted".into(), f.accepted));
        funnel.push(("rejected".into(), f.rejected));
        funnel.push(("verification_errors".into(), f.errors));
    }

    let mut trains: Vec<(Variant, TrainSummary)> = Vec::new();
    let mut trace_csv = format!("{TRACE_CSV_HEADER}\n");
    for v in Variant::ALL {
        let dir = layout.train_dir(v);
        let rel = format!("train/{}/summary.json", v.name());
        if let Some(s) = load::<TrainSummary>(&dir.join("summary.json"), &rel, &mut missing)? {
            trains.push((v, s));
            let rows: Vec<TraceRow> = fsutil::read_jsonl(&dir.join("trace.jsonl"))?;
            for r in rows {
                let _ = writeln!(
                    trace_csv,
                    "{},{},{},{},{},{}",
                    r.step,
                    v.name(),
                    r.loss,
                    opt(r.far_bg_residual),
                    opt(r.bg_fraction),
                    opt(r.target_fraction)
                );
            }
        }
    }

    let mut evals: Vec<EvalReport> = Vec::new();
    for m in MODELS {
        let path = layout.eval_report(m);
        if path.exists() {
            evals.push(fsutil::read_json(&path)?);
        } else if m != "oracle" && m != "untrained" {
            missing.push(format!("eval/{m}.json"));
        }
    }

    funnel.push(("trained_variants".into(), trains.len()));
    funnel.push(("evaluated_models".into(), evals.len()));

    let mut comparison = format!("{COMPARISON_CSV_HEADER}\n");
    for e in &evals {
        let t = trains.iter().find(|(v, _)| v.name() == e.model).map(|(_, s)| s);
        let m = &e.metrics;
        let _ = writeln!(
            comparison,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            e.model,
            e.accuracy.overall,
            e.accuracy.half_width,
            m.edit_similarity.average.mean,
            m.edit_similarity.bon.mean,
            m.wer.average.mean,
            m.wer.bon.mean,
            m.substring_ratio.average.mean,
            m.substring_ratio.bon.mean,
            opt(t.map(|s| s.final_loss)),
            opt(t.and_then(|s| s.mean_bg_fraction)),
            opt(t.and_then(|s| s.max_far_bg_residual)),
        );
    }
    let mut funnel_csv = format!("{FUNNEL_CSV_HEADER}\n");
    for (stage, n) in &funnel {
        let _ = writeln!(funnel_csv, "{stage},{n}");
    }

    let mut md = String::from("# Run report\n\n## Data funnel\n\n| stage | count |\n|---|---:|\n");
    for (stage, n) in &funnel {
        let _ = writeln!(md, "| {stage} | {n} |");
    }
    if !trains.is_empty() {
        md.push_str("\n## Training\n\n| variant | pairs | steps | final loss | mean bg fraction | max far-bg residual |\n|---|---:|---:|---:|---:|---:|\n");
        for (v, s) in &trains {
            let _ = writeln!(
                md,
                "| {v} | {} | {} | {:.5} | {} | {} |",
                s.pairs,
                s.steps,
                s.final_loss,
                s.mean_bg_fraction.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into()),
                s.max_far_bg_residual.map(|x| format!("{x:e}")).unwrap_or_else(|| "-".into()),
            );
        }
    }
    if !evals.is_empty() {
        md.push_str("\n## Target accuracy\n\n| model | accuracy | ± |\n|---|---:|---:|\n");
        for e in &evals {
            let _ = writeln!(md, "| {} | {:.4} | {:.4} |", e.model, e.accuracy.overall, e.accuracy.half_width);
        }
        md.push_str("\n## Text metrics\n\n");
        for e in &evals {
            let _ = writeln!(md, "```\n{}```\n", render_table(&e.metrics, &format!("{} (n={})", e.model, e.metrics.n)));
        }
    }
    if !missing.is_empty() {
        md.push_str("\n## Missing artifacts\n\n");
        for m in &missing {
            let _ = writeln!(md, "- {m}");
        }
    }

    let dir = layout.report_dir();
    std::fs::create_dir_all(&dir)?;
    fsutil::write_atomic(&dir.join("summary.md"), md.as_bytes())?;
    fsutil::write_atomic(&dir.join("funnel.csv"), funnel_csv.as_bytes())?;
    fsutil::write_atomic(&dir.join("comparison.csv"), comparison.as_bytes())?;
    fsutil::write_atomic(&dir.join("trace.csv"), trace_csv.as_bytes())?;
    write_run_timings(&layout)?;
    Ok(ReportSummary {
        funnel: funnel.into_iter().map(|(stage, count)| FunnelStage { stage, count }).collect(),
        models: evals.into_iter().map(|e| e.model).collect(),
        missing,
    })
}
