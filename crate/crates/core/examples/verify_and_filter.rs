//! Verification responses, the confidence gate, and a filtering pass over
//! clean and deliberately broken pairs.
//!
//!     cargo run --example verify_and_filter

use di3po::clients::mock::{Corruption, CorruptionKnobs, MockImageModel, MockVerifier};
use di3po::clients::ImageModel;
use di3po::clock::LogicalClock;
use di3po::filter::{filter_dataset, gate, parse_verifier_response, FilterOptions};
use di3po::pairgen::{compose_diptych_prompt, make_misspelling, split_diptych, Orientation, PairRecord, RecordStatus, SplitParams};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let raw = "explanation: \"Both panels share the same scene; the second misspells the word.\"\npassing: true\nconfidence: 85\n";
    let parsed = parse_verifier_response(raw)?;
    for threshold in [70, 85, 90] {
        println!("confidence {} at threshold {threshold}: {:?}", parsed.confidence, gate(&parsed, threshold));
    }

    let dir = tempfile_dir()?;
    let kinds = [None, Some(Corruption::NoText), Some(Corruption::DifferentBackground), Some(Corruption::SameText), None];
    let mut records = Vec::new();
    for (i, force) in kinds.iter().enumerate() {
        let pair = make_misspelling("GARDEN", 0.2, i as u64)?;
        let prompt = compose_diptych_prompt("a quiet lake at dawn", &pair, Orientation::LeftCorrect)?;
        let model = MockImageModel { knobs: CorruptionKnobs { force: *force, ..CorruptionKnobs::default() }, ..MockImageModel::default() };
        let img = model.generate_diptych(&prompt, i as u64)?;
        let split = split_diptych(&img, &SplitParams::default())?;
        let (w, l) = (format!("{i}_w.png"), format!("{i}_l.png"));
        split.left.save_png(&dir.join(&w))?;
        split.right.save_png(&dir.join(&l))?;
        records.push(PairRecord {
            id: format!("pair-{i}"),
            word_pair: pair,
            background: "a quiet lake at dawn".into(),
            diptych_prompt: prompt,
            orientation: Orientation::LeftCorrect,
            diptych_path: String::new(),
            winner_path: w,
            loser_path: l,
            split: Some(split.meta),
            status: RecordStatus::Ok,
            error: None,
        });
    }
    let outcome = filter_dataset(&records, &dir, &MockVerifier::default(), FilterOptions::default(), &LogicalClock::default());
    for (a, force) in outcome.audit.iter().zip(kinds) {
        println!("{:<8} {:<22} {:?} {}", a.record_id, format!("{force:?}"), a.decision, a.detail.clone().unwrap_or_default());
    }
    println!("accepted {} of {}", outcome.accepted.len(), records.len());
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}

fn tempfile_dir() -> std::io::Result<std::path::PathBuf> {
    let d = std::env::temp_dir().join(format!("verify_and_filter_{}", std::process::id()));
    std::fs::create_dir_all(&d)?;
    Ok(d)
}
