//! Manifest records for generated diptych pairs.

use serde::{Deserialize, Serialize};

use super::misspell::WordPair;
use super::prompts::Orientation;
use super::split::SplitMeta;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordStatus {
    Ok,
    Error,
}

/// One line of the pair manifest. Image paths are relative to the dataset
/// root. The winner image always holds `word_pair.correct`, whichever panel
/// it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub id: String,
    pub word_pair: WordPair,
    pub background: String,
    pub diptych_prompt: String,
    pub orientation: Orientation,
    pub diptych_path: String,
    pub winner_path: String,
    pub loser_path: String,
    pub split: Option<SplitMeta>,
    pub status: RecordStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl PairRecord {
    pub fn is_ok(&self) -> bool {
        self.status == RecordStatus::Ok
    }
}
