//! Seeded misspellings with a replayable edit log.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EditKind {
    Substitute,
    Duplicate,
    Delete,
}

/// One edit at a position of the original word. `ch` is the replacement
/// character for substitutions, the repeated character for duplications and
/// the removed character for deletions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditOp {
    pub position: usize,
    pub kind: EditKind,
    pub ch: char,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WordPair {
    pub correct: String,
    pub misspelled: String,
    pub edits: Vec<EditOp>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MisspellError {
    #[error("cannot misspell an empty word")]
    EmptyWord,
    #[error("rate must be in (0, 1], got {0}")]
    InvalidRate(f64),
    #[error("edit at position {position} is out of range for a word of length {len}")]
    BadEdit { position: usize, len: usize },
}

const SUBSTITUTES: &[u8] = b"ABCDEFGHIJKLMNOPQRSTUVWXYZ";
const MAX_REDRAWS: u64 = 64;

/// Number of positions modified for a word of `len` characters.
pub fn edit_count(len: usize, rate: f64) -> usize {
    ((rate * len as f64).round() as usize).clamp(1, len)
}

/// Applies `edits` (positions refer to the original word) to `word`.
pub fn replay(word: &str, edits: &[EditOp]) -> Result<String, MisspellError> {
    let mut chars: Vec<char> = word.chars().collect();
    let len = chars.len();
    let mut ordered: Vec<&EditOp> = edits.iter().collect();
    ordered.sort_by_key(|e| std::cmp::Reverse(e.position));
    for e in ordered {
        if e.position >= len {
            return Err(MisspellError::BadEdit {
                position: e.position,
                len,
            });
        }
        match e.kind {
            EditKind::Substitute => chars[e.position] = e.ch,
            EditKind::Duplicate => chars.insert(e.position, chars[e.position]),
            EditKind::Delete => {
                chars.remove(e.position);
            }
        }
    }
    Ok(chars.into_iter().collect())
}

/// Modifies `edit_count(len, rate)` distinct positions of `word`, each with
/// an edit kind drawn uniformly from substitute, duplicate and delete.
/// Deletion is not drawn when it would empty the word. Draws that happen to
/// reproduce the input are discarded and redrawn from the same stream.
pub fn make_misspelling(word: &str, rate: f64, rng_seed: u64) -> Result<WordPair, MisspellError> {
    if word.is_empty() {
        return Err(MisspellError::EmptyWord);
    }
    if !(rate > 0.0 && rate <= 1.0) {
        return Err(MisspellError::InvalidRate(rate));
    }
    let chars: Vec<char> = word.chars().collect();
    let k = edit_count(chars.len(), rate);
    for attempt in 0..MAX_REDRAWS {
        let mut rng = seed::rng_from(rng_seed, &[seed::str_tag(word), attempt]);
        let mut positions = index::sample(&mut rng, chars.len(), k).into_vec();
        positions.sort_unstable();
        let mut deletes = 0;
        let mut edits = Vec::with_capacity(k);
        for p in positions {
            let can_delete = deletes + 1 < chars.len();
            let kind = match rng.random_range(0..if can_delete { 3 } else { 2 }) {
                0 => EditKind::Substitute,
                1 => EditKind::Duplicate,
                _ => EditKind::Delete,
            };
            let ch = match kind {
                EditKind::Substitute => loop {
                    let c = SUBSTITUTES[rng.random_range(0..SUBSTITUTES.len())] as char;
                    if c != chars[p] {
                        break c;
                    }
                },
                EditKind::Duplicate => chars[p],
                EditKind::Delete => {
                    deletes += 1;
                    chars[p]
                }
            };
            edits.push(EditOp {
                position: p,
                kind,
                ch,
            });
        }
        let misspelled = replay(word, &edits)?;
        if misspelled != word {
            return Ok(WordPair {
                correct: word.to_string(),
                misspelled,
                edits,
            });
        }
    }
    // Unreachable in practice: a single substitution always changes the word.
    let c = if chars[0] == 'A' { 'B' } else { 'A' };
    let edits = vec![EditOp {
        position: 0,
        kind: EditKind::Substitute,
        ch: c,
    }];
    Ok(WordPair {
        correct: word.to_string(),
        misspelled: replay(word, &edits)?,
        edits,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn taste_to_tastn_is_a_valid_single_edit() {
        assert_eq!(edit_count(5, 0.2), 1);
        let op = EditOp {
            position: 4,
            kind: EditKind::Substitute,
            ch: 'N',
        };
        assert_eq!(replay("TASTE", &[op]).unwrap(), "TASTN");
        let found = (0..5000u64).any(|s| make_misspelling("TASTE", 0.2, s).unwrap().misspelled == "TASTN");
        assert!(found);
    }

    #[test]
    fn single_character_word_gets_one_edit() {
        for s in 0..200 {
            let p = make_misspelling("A", 0.2, s).unwrap();
            assert_eq!(p.edits.len(), 1);
            assert_ne!(p.misspelled, "A");
            assert!(!p.misspelled.is_empty());
        }
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let first = make_misspelling("FRAGILE", 0.2, 42).unwrap();
        for _ in 0..100 {
            assert_eq!(make_misspelling("FRAGILE", 0.2, 42).unwrap(), first);
        }
    }

    #[test]
    fn rejects_bad_input() {
        assert_eq!(make_misspelling("", 0.2, 1), Err(MisspellError::EmptyWord));
        assert!(matches!(make_misspelling("AB", 0.0, 1), Err(MisspellError::InvalidRate(_))));
        assert!(matches!(make_misspelling("AB", 1.5, 1), Err(MisspellError::InvalidRate(_))));
    }

    #[test]
    fn all_kinds_occur() {
        let mut seen = [false; 3];
        for s in 0..300 {
            for e in make_misspelling("HARMONY", 0.2, s).unwrap().edits {
                seen[e.kind as usize] = true;
            }
        }
        assert_eq!(seen, [true; 3]);
    }

    proptest! {
        #[test]
        fn invariants(word in "[A-Z]{1,14}", rate in 0.05f64..=1.0, s in any::<u64>()) {
            let p = make_misspelling(&word, rate, s).unwrap();
            let len = word.chars().count();
            let k = edit_count(len, rate);
            prop_assert_eq!(p.edits.len(), k);
            prop_assert_ne!(&p.misspelled, &word);
            let ml = p.misspelled.chars().count();
            prop_assert!(ml + k >= len && ml <= len + k);
            prop_assert_eq!(replay(&word, &p.edits).unwrap(), p.misspelled.clone());
            let mut positions: Vec<_> = p.edits.iter().map(|e| e.position).collect();
            positions.dedup();
            prop_assert_eq!(positions.len(), k);
        }
    }
}
