//! Diptych preference-pair construction: misspellings, prompts, edge-based
//! panel splitting and the pair manifest.

pub mod canny;
pub mod misspell;
pub mod prompts;
pub mod record;
pub mod split;

pub use canny::{canny_edges, CannyParams};
pub use misspell::{make_misspelling, EditKind, EditOp, WordPair};
pub use prompts::{compose_background_request, compose_diptych_prompt, Orientation};
pub use record::{PairRecord, RecordStatus};
pub use split::{split_diptych, Split, SplitMeta, SplitMethod, SplitParams};
