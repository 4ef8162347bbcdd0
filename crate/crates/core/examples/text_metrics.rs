//! Edit similarity, word error rate and substring match ratio, aggregated
//! over sampling seeds as Average and Best-of-n with bootstrap errors.
//!
//!     cargo run --example text_metrics

use di3po::metrics::{aggregate_seeds, bootstrap_ci, edit_similarity, render_table, substring_match_ratio, word_error_rate, AggregateOptions, EvalSample};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    for (hyp, reference) in [("TASTN", "TASTE"), ("OPEN DAILY", "OPEN DAILY"), ("0PEN DAILY 24H", "OPEN DAILY")] {
        println!(
            "{hyp:>16} vs {reference:<12} similarity {:.3}  wer {:.3}  substring {:.3}",
            edit_similarity(hyp, reference),
            word_error_rate(hyp, reference)?,
            substring_match_ratio(hyp, reference)?
        );
    }

    let samples = vec![
        EvalSample {
            prompt_id: "p0".into(),
            ground_truth: vec!["FRESH".into(), "BREAD".into()],
            seeds: vec![0, 1, 2, 3],
            ocr_texts: vec!["FRESH BREAD".into(), "FRESN BREAD".into(), "FRSH BRAD".into(), "FRESH BREAO".into()],
        },
        EvalSample {
            prompt_id: "p1".into(),
            ground_truth: vec!["EXIT".into()],
            seeds: vec![0, 1, 2, 3],
            ocr_texts: vec!["EXLT".into(), "EXIT".into(), "".into(), "EXT".into()],
        },
        EvalSample {
            prompt_id: "p2".into(),
            ground_truth: vec!["GARDEN".into(), "CAFE".into()],
            seeds: vec![0, 1, 2, 3],
            ocr_texts: vec!["GARDEN CAFE".into(), "GARDEN CAFE".into(), "GARDFN CAFE".into(), "GARDEN CAPE".into()],
        },
    ];
    for n in [1, 4] {
        let report = aggregate_seeds(&samples, AggregateOptions { n, ..AggregateOptions::default() })?;
        print!("{}", render_table(&report, &format!("demo (n={n})")));
    }

    let coin: Vec<f64> = (0..100).map(|i| (i % 2) as f64).collect();
    let b = bootstrap_ci(&coin, 1000, 0)?;
    println!("bootstrap over 100 fair coins: mean {:.3}, SE {:.4} (analytic 0.05), 95% [{:.3}, {:.3}]", b.mean, b.half_width, b.ci_low, b.ci_high);
    Ok(())
}
