//! Build a handful of diptych preference pairs with the offline services:
//! misspell a word, ask for a background, compose the two-panel prompt,
//! render it and split it at the seam.
//!
//!     cargo run --example pair_generation -- [out_dir]

use di3po::clients::mock::{MockImageModel, MockTextModel};
use di3po::clients::{ImageModel, TextModel};
use di3po::font;
use di3po::pairgen::prompts::parse_background_response;
use di3po::pairgen::{compose_background_request, compose_diptych_prompt, make_misspelling, split_diptych, Orientation, SplitParams};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::path::PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "pairs_demo".into()));
    std::fs::create_dir_all(&out)?;
    let text = MockTextModel { seed: 7 };
    let image = MockImageModel::default();

    for (i, word) in ["TASTE", "GARDEN", "SUNSET", "COFFEE"].iter().enumerate() {
        let pair = make_misspelling(word, 0.2, i as u64)?;
        let answer = text.generate(&compose_background_request(&pair))?;
        let background = parse_background_response(&answer).ok_or("no background in response")?;
        let orientation = if i % 2 == 0 { Orientation::LeftCorrect } else { Orientation::RightCorrect };
        let prompt = compose_diptych_prompt(&background, &pair, orientation)?;
        let img = image.generate_diptych(&prompt, 100 + i as u64)?;
        let split = split_diptych(&img, &SplitParams::default())?;
        let (winner, loser) = match orientation {
            Orientation::LeftCorrect => (&split.left, &split.right),
            Orientation::RightCorrect => (&split.right, &split.left),
        };
        println!(
            "{} -> {} ({:?}), split at x = {} by {:?}; panels read {:?} / {:?}",
            pair.correct,
            pair.misspelled,
            pair.edits.iter().map(|e| e.kind).collect::<Vec<_>>(),
            split.meta.split_x,
            split.meta.method,
            font::read_text(winner),
            font::read_text(loser)
        );
        println!("  background: {background}");
        img.save_png(&out.join(format!("{i}_diptych.png")))?;
        winner.save_png(&out.join(format!("{i}_winner.png")))?;
        loser.save_png(&out.join(format!("{i}_loser.png")))?;
    }
    println!("images written to {}", out.display());
    Ok(())
}
