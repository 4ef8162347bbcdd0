//! Prompt templates for background descriptions and diptych generation.
//!
//! Slots are filled in a single left-to-right pass, so braces inside
//! substituted values are copied literally and never treated as slots.

use serde::{Deserialize, Serialize};

use super::misspell::WordPair;

pub const BACKGROUND_REQUEST_TEMPLATE: &str = include_str!("../templates/background_request.txt");
pub const DIPTYCH_TEMPLATE: &str = include_str!("../templates/diptych_prompt.txt");

/// Which panel carries the correctly spelled word.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Orientation {
    LeftCorrect,
    RightCorrect,
}

impl Orientation {
    pub fn first_label(self) -> &'static str {
        match self {
            Orientation::LeftCorrect => "Left",
            Orientation::RightCorrect => "Right",
        }
    }

    pub fn second_label(self) -> &'static str {
        match self {
            Orientation::LeftCorrect => "Right",
            Orientation::RightCorrect => "Left",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PromptError {
    #[error("background description is empty")]
    EmptyBackground,
    #[error("template references unknown slot {{{0}}}")]
    UnknownSlot(String),
}

/// Replaces `{name}` for every `(name, value)` in `slots`. Unknown slot
/// names are an error; a `{` without a closing `}` is copied through.
pub fn fill_template(template: &str, slots: &[(&str, &str)]) -> Result<String, PromptError> {
    let mut out = String::with_capacity(template.len() + 256);
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close) if after[..close].chars().all(|c| c.is_ascii_alphanumeric() || c == '_') => {
                let name = &after[..close];
                let value = slots
                    .iter()
                    .find(|(n, _)| *n == name)
                    .map(|(_, v)| *v)
                    .ok_or_else(|| PromptError::UnknownSlot(name.to_string()))?;
                out.push_str(value);
                rest = &after[close + 1..];
            }
            _ => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    Ok(out)
}

pub fn compose_background_request(pair: &WordPair) -> String {
    fill_template(
        BACKGROUND_REQUEST_TEMPLATE,
        &[("right_input", &pair.correct), ("misspelling", &pair.misspelled)],
    )
    .expect("built-in template slots are known")
}

pub fn compose_diptych_prompt(
    background: &str,
    pair: &WordPair,
    orientation: Orientation,
) -> Result<String, PromptError> {
    if background.trim().is_empty() {
        return Err(PromptError::EmptyBackground);
    }
    fill_template(
        DIPTYCH_TEMPLATE,
        &[
            ("first_orientation", orientation.first_label()),
            ("second_orientation", orientation.second_label()),
            ("right_input", &pair.correct),
            ("misspelling", &pair.misspelled),
            ("generated_background", background),
        ],
    )
}

/// Extracts the `generated_background:` answer from a text-model response.
/// Returns `None` when the label is absent or its value is empty.
pub fn parse_background_response(text: &str) -> Option<String> {
    const LABEL: &str = "generated_background:";
    let lower = text.to_ascii_lowercase();
    let start = lower.rfind(LABEL)? + LABEL.len();
    let value = text[start..].trim();
    (!value.is_empty()).then(|| value.split_whitespace().collect::<Vec<_>>().join(" "))
}

/// Fields a diptych prompt carries, recovered by scanning its fixed phrases.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedDiptychPrompt {
    pub orientation: Orientation,
    pub correct: String,
    pub misspelled: String,
    pub background: String,
}

fn word_after<'a>(text: &'a str, marker: &str) -> Option<&'a str> {
    let start = text.find(marker)? + marker.len();
    let rest = text[start..].trim_start();
    let end = rest
        .find(|c: char| !(c.is_ascii_alphanumeric()))
        .unwrap_or(rest.len());
    (end > 0).then(|| &rest[..end])
}

/// Inverse of [`compose_diptych_prompt`] for prompts built from the
/// built-in template.
pub fn parse_diptych_prompt(prompt: &str) -> Option<ParsedDiptychPrompt> {
    let left = prompt.find("Left Image:")?;
    let right = prompt.find("Right Image:")?;
    let orientation = if left < right {
        Orientation::LeftCorrect
    } else {
        Orientation::RightCorrect
    };
    let correct = word_after(prompt, "On this image render the word")?.to_string();
    let misspelled = word_after(prompt, "the word as **")?.to_string();
    let bg_start = prompt.rfind("Background: ")? + "Background: ".len();
    let background = prompt[bg_start..].trim_end_matches('\n').to_string();
    Some(ParsedDiptychPrompt {
        orientation,
        correct,
        misspelled,
        background,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pairgen::misspell::{EditKind, EditOp};

    fn taste() -> WordPair {
        WordPair {
            correct: "TASTE".into(),
            misspelled: "TASTN".into(),
            edits: vec![EditOp {
                position: 4,
                kind: EditKind::Substitute,
                ch: 'N',
            }],
        }
    }

    #[test]
    fn background_request_mentions_both_words() {
        let p = compose_background_request(&taste());
        assert!(p.contains("Do not include \nTASTE or TASTN in the background description."));
        assert!(!p.contains('{'));
    }

    #[test]
    fn left_orientation_puts_correct_word_first() {
        let p = compose_diptych_prompt("Copper.", &taste(), Orientation::LeftCorrect).unwrap();
        let first = p.find("Left Image:").unwrap();
        assert!(first < p.find("Right Image:").unwrap());
        assert!(first < p.find("render the word TASTE").unwrap());
        assert!(p.ends_with("Background: Copper.\n"));
    }

    #[test]
    fn braces_in_background_are_literal() {
        let bg = "Neon sign reading {misspelling} and {right_input} {";
        let p = compose_diptych_prompt(bg, &taste(), Orientation::RightCorrect).unwrap();
        assert!(p.contains(bg));
        assert_eq!(p.matches("TASTN").count(), 2);
        let parsed = parse_diptych_prompt(&p).unwrap();
        assert_eq!(parsed.background, bg);
        assert_eq!(parsed.orientation, Orientation::RightCorrect);
    }

    #[test]
    fn empty_background_is_rejected() {
        assert_eq!(
            compose_diptych_prompt("  ", &taste(), Orientation::LeftCorrect),
            Err(PromptError::EmptyBackground)
        );
    }

    #[test]
    fn unknown_slots_error() {
        assert_eq!(
            fill_template("a {b} c", &[]),
            Err(PromptError::UnknownSlot("b".into()))
        );
        assert_eq!(fill_template("x { y } {", &[]).unwrap(), "x { y } {");
    }

    #[test]
    fn parse_roundtrip() {
        for o in [Orientation::LeftCorrect, Orientation::RightCorrect] {
            let p = compose_diptych_prompt("Misty forest at dawn.", &taste(), o).unwrap();
            let parsed = parse_diptych_prompt(&p).unwrap();
            assert_eq!(parsed.orientation, o);
            assert_eq!(parsed.correct, "TASTE");
            assert_eq!(parsed.misspelled, "TASTN");
            assert_eq!(parsed.background, "Misty forest at dawn.");
        }
    }

    #[test]
    fn background_response_parsing() {
        assert_eq!(
            parse_background_response("Sure.\ngenerated_background: A slate\n  wall."),
            Some("A slate wall.".into())
        );
        assert_eq!(parse_background_response("generated_background:   "), None);
        assert_eq!(parse_background_response("no label"), None);
    }
}
