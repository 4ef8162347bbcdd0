//! Instantiated prompts and file headers against stored fixtures, byte for byte.

use di3po::filter::compose_verification_prompt;
use di3po::pairgen::{compose_background_request, compose_diptych_prompt, Orientation, WordPair};
use di3po::pipeline::TRACE_CSV_HEADER;

fn taste() -> WordPair {
    WordPair {
        correct: "TASTE".into(),
        misspelled: "TASTN".into(),
        edits: Vec::new(),
    }
}

#[test]
fn background_request_matches_fixture() {
    assert_eq!(compose_background_request(&taste()), include_str!("fixtures/background_request_TASTE_TASTN.txt"));
}

#[test]
fn diptych_prompt_matches_fixture() {
    let p = compose_diptych_prompt("A weathered copper plate with green patina.", &taste(), Orientation::LeftCorrect).unwrap();
    assert_eq!(p, include_str!("fixtures/diptych_prompt_TASTE_TASTN_left.txt"));
}

#[test]
fn verification_prompt_matches_fixture() {
    assert_eq!(compose_verification_prompt(), include_str!("fixtures/verification_prompt.txt"));
}

#[test]
fn trace_csv_header_matches_fixture() {
    assert_eq!(format!("{TRACE_CSV_HEADER}\n"), include_str!("fixtures/trace_csv_header.txt"));
}

#[test]
fn right_orientation_swaps_the_panel_labels() {
    let p = compose_diptych_prompt("A weathered copper plate with green patina.", &taste(), Orientation::RightCorrect).unwrap();
    assert!(p.starts_with("Two images with a left and right panel"));
    assert!(p.contains("Right Image: Create an image with this background below.\nOn this image render the word TASTE."));
    assert!(p.contains("Left Image: Create an identical image"));
}
