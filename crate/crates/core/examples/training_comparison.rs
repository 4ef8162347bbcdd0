//! Fine-tune one pretrained base three ways under a matched budget (SFT on
//! winners, DPO on background-varied pairs, DPO on diptych pairs) and
//! compare target accuracy. The defaults take a few minutes on one core;
//! pass a smaller step count for a quick look.
//!
//!     cargo run --release --example training_comparison -- [steps] [out_dir]

use di3po::experiments::{compare_variants, matched_runs, ExperimentConfig, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let steps: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(900);
    let out = args.next().map(std::path::PathBuf::from);
    let cfg = ExperimentConfig::default();
    let train = TrainConfig { steps, ..TrainConfig::default() };
    let report = compare_variants(&cfg, &matched_runs(train), out.as_deref())?;

    println!("{:<24} {:>10} {:>8} {:>12} {:>14}", "model", "accuracy", "+-", "bg fraction", "far bg resid");
    for m in [&report.untrained, &report.base].into_iter().chain(&report.variants) {
        let opt = |v: Option<f64>, p: usize| v.map(|x| format!("{x:.p$e}")).unwrap_or_else(|| "-".into());
        println!(
            "{:<24} {:>10.4} {:>8.4} {:>12} {:>14}",
            m.name,
            m.accuracy,
            m.half_width,
            m.mean_bg_fraction.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into()),
            opt(m.max_far_bg_residual, 1)
        );
    }
    let bg = &report.bg_fraction;
    println!(
        "\nbackground share of the gradient difference at the base model: diptych {:.4}, varied {:.4} (lower in {}/{}, sign test p = {:.1e})",
        bg.diptych_mean, bg.varied_mean, bg.diptych_lower, bg.n, bg.sign_test_p
    );
    Ok(())
}
