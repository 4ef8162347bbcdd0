//! The whole workflow, offline, in one run directory: generate pairs,
//! filter them, fine-tune every variant, evaluate and write the report.
//! Budgets are cut down so this finishes in about a minute.
//!
//!     cargo run --release --example pipeline_run -- [run_dir]

use di3po::experiments::Variant;
use di3po::metrics::render_table;
use di3po::pipeline::{cmd_eval, cmd_filter, cmd_gen_pairs, cmd_report, cmd_train, EvalTarget, PipelineConfig, Services};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let root = std::env::args().nth(1).unwrap_or_else(|| "run_demo".into());
    let overrides: Vec<(String, String)> = [
        ("root", root.as_str()),
        ("count", "60"),
        ("mock.corruption_rate", "0.1"),
        ("pretrain.steps", "1000"),
        ("train.steps", "150"),
        ("eval.prompts", "20"),
        ("eval.accuracy_samples", "100"),
    ]
    .iter()
    .map(|(k, v)| (k.to_string(), v.to_string()))
    .collect();
    let cfg = PipelineConfig::load(None, &overrides)?;
    let services = Services::from_config(&cfg)?;

    println!("gen-pairs: {:?}", cmd_gen_pairs(&cfg, &services)?);
    println!("filter:    {:?}", cmd_filter(&cfg, &services)?);
    for v in Variant::ALL {
        let s = cmd_train(&cfg, v)?;
        println!("train {v}: final loss {:.4}, far-bg residual {:?}", s.final_loss, s.max_far_bg_residual);
    }
    for t in [EvalTarget::Base].into_iter().chain(Variant::ALL.map(EvalTarget::Variant)) {
        let r = cmd_eval(&cfg, &services, t)?;
        print!("{}", render_table(&r.metrics, &format!("{} (n={})", r.model, r.metrics.n)));
        println!("{:<24} target accuracy {:.3} +- {:.3}", "", r.accuracy.overall, r.accuracy.half_width);
    }
    let report = cmd_report(&cfg)?;
    println!("report written to {root}/report (missing: {:?})", report.missing);
    Ok(())
}
