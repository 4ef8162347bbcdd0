//! Verification of generated pairs and the confidence gate.

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::clients::retry::with_retries;
use crate::clients::{ClientError, Verifier};
use crate::clock::Clock;
use crate::pairgen::PairRecord;
use crate::raster::RgbImage;

pub const VERIFICATION_PROMPT: &str = include_str!("templates/verification_prompt.txt");
pub const DEFAULT_THRESHOLD: i64 = 70;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerificationResult {
    pub explanation: String,
    pub passing: bool,
    pub confidence: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParseError {
    #[error("response has no `{0}` field")]
    MissingField(&'static str),
    #[error("`passing` must be true or false, got {0:?}")]
    NonBoolean(String),
    #[error("`confidence` must be an integer, got {0:?}")]
    NonInteger(String),
    #[error("`confidence` must be within [0, 100], got {0}")]
    OutOfRange(i64),
    #[error("explanation has an unterminated quote")]
    UnterminatedQuote,
}

pub fn compose_verification_prompt() -> &'static str {
    VERIFICATION_PROMPT
}

fn label_regex() -> Regex {
    Regex::new(r"(?mi)^[ \t>*_-]*(explanation|passing|confidence)[*_]*[ \t]*:[ \t]*").unwrap()
}

/// Reads a quoted string starting at the opening quote of `s`. Returns the
/// unescaped content and the byte length consumed, closing quote included.
fn read_quoted(s: &str) -> Result<(String, usize), ParseError> {
    let mut out = String::new();
    let mut chars = s.char_indices().skip(1);
    while let Some((i, c)) = chars.next() {
        match c {
            '\\' => match chars.next() {
                Some((_, e @ ('"' | '\\'))) => out.push(e),
                Some((_, e)) => {
                    out.push('\\');
                    out.push(e);
                }
                None => return Err(ParseError::UnterminatedQuote),
            },
            '"' => return Ok((out, i + 1)),
            c => out.push(c),
        }
    }
    Err(ParseError::UnterminatedQuote)
}

fn clean_scalar(v: &str) -> &str {
    v.trim()
        .trim_matches(|c: char| c == '*' || c == '`' || c == '"' || c == '\'')
        .trim_end_matches(['.', ','])
}

/// Extracts the three labeled fields. Labels are matched case-insensitively
/// at line starts, in any order, with free prose around them; the first
/// occurrence of each wins. A quoted explanation may span lines and escape
/// `"` and `\` with a backslash. An unquoted explanation runs to the next
/// label.
pub fn parse_verifier_response(text: &str) -> Result<VerificationResult, ParseError> {
    let re = label_regex();
    let (mut explanation, mut passing, mut confidence) = (None, None, None);
    let mut pos = 0;
    while let Some(caps) = re.captures_at(text, pos) {
        let m = caps.get(0).unwrap();
        let label = caps[1].to_ascii_lowercase();
        let rest = &text[m.end()..];
        let line_end = rest.find('\n').unwrap_or(rest.len());
        match label.as_str() {
            "explanation" => {
                if rest.starts_with('"') {
                    let (value, used) = read_quoted(rest)?;
                    explanation.get_or_insert(value);
                    pos = m.end() + used;
                } else {
                    let next = re.find_at(text, m.end() + line_end).map(|n| n.start()).unwrap_or(text.len());
                    let value = text[m.end()..next].trim().to_string();
                    explanation.get_or_insert(value);
                    pos = next;
                }
                continue;
            }
            "passing" => {
                if passing.is_none() {
                    let v = clean_scalar(&rest[..line_end]);
                    passing = Some(match v.to_ascii_lowercase().as_str() {
                        "true" => true,
                        "false" => false,
                        _ => return Err(ParseError::NonBoolean(v.to_string())),
                    });
                }
            }
            _ => {
                if confidence.is_none() {
                    let v = clean_scalar(&rest[..line_end]);
                    let n: i64 = v.parse().map_err(|_| ParseError::NonInteger(v.to_string()))?;
                    if !(0..=100).contains(&n) {
                        return Err(ParseError::OutOfRange(n));
                    }
                    confidence = Some(n as u8);
                }
            }
        }
        pos = m.end() + line_end;
    }
    let explanation = explanation
        .filter(|e| !e.trim().is_empty())
        .ok_or(ParseError::MissingField("explanation"))?;
    Ok(VerificationResult {
        explanation,
        passing: passing.ok_or(ParseError::MissingField("passing"))?,
        confidence: confidence.ok_or(ParseError::MissingField("confidence"))?,
    })
}

/// Serializes in the response format, quoting and escaping the explanation.
pub fn format_verifier_response(r: &VerificationResult) -> String {
    let escaped = r.explanation.replace('\\', "\\\\").replace('"', "\\\"");
    format!(
        "explanation: \"{escaped}\"\npassing: {}\nconfidence: {}\n",
        r.passing, r.confidence
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RejectReason {
    FailedCheck,
    LowConfidence,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "decision", content = "reason")]
pub enum GateDecision {
    Accepted,
    Rejected(RejectReason),
}

/// Accepts iff the pair passed and its confidence is strictly above
/// `threshold`.
pub fn gate(result: &VerificationResult, threshold: i64) -> GateDecision {
    if !result.passing {
        GateDecision::Rejected(RejectReason::FailedCheck)
    } else if (result.confidence as i64) > threshold {
        GateDecision::Accepted
    } else {
        GateDecision::Rejected(RejectReason::LowConfidence)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditDecision {
    Accepted,
    Rejected,
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub record_id: String,
    pub explanation: Option<String>,
    pub passing: Option<bool>,
    pub confidence: Option<u8>,
    pub decision: AuditDecision,
    /// Rejection reason or error message.
    pub detail: Option<String>,
    pub attempts: u32,
    pub timestamp: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FilterOptions {
    pub threshold: i64,
    pub max_retries: u32,
    pub workers: usize,
}

impl Default for FilterOptions {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_THRESHOLD,
            max_retries: 3,
            workers: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutcome {
    pub accepted: Vec<PairRecord>,
    pub audit: Vec<AuditEntry>,
}

impl FilterOutcome {
    pub fn count(&self, d: AuditDecision) -> usize {
        self.audit.iter().filter(|a| a.decision == d).count()
    }
}

enum Verdict {
    Judged(VerificationResult, u32),
    Failed(String, u32),
}

fn verify_record(record: &PairRecord, root: &Path, verifier: &dyn Verifier, max_retries: u32) -> Verdict {
    if !record.is_ok() {
        return Verdict::Failed(
            format!("generation failed: {}", record.error.as_deref().unwrap_or("unknown")),
            0,
        );
    }
    let load = |rel: &str| RgbImage::load_png(&root.join(rel)).map_err(|e| format!("cannot read {rel}: {e}"));
    let (w, l) = match (load(&record.winner_path), load(&record.loser_path)) {
        (Ok(w), Ok(l)) => (w, l),
        (Err(e), _) | (_, Err(e)) => return Verdict::Failed(e, 0),
    };
    let prompt = compose_verification_prompt();
    let result = with_retries(max_retries, |_| {
        let text = verifier.verify(&w, &l, prompt)?;
        parse_verifier_response(&text).map_err(|e| ClientError::MalformedResponse(e.to_string()))
    });
    match result {
        Ok(a) => Verdict::Judged(a.value, a.attempts),
        Err(f) => Verdict::Failed(f.error.to_string(), f.attempts),
    }
}

/// Verifies every record, gating each result. Records whose images cannot
/// be read or whose verification keeps failing are audited as errors and
/// left out of the accepted set, but not counted as rejections. Audit order
/// and timestamps follow manifest order regardless of worker scheduling.
pub fn filter_dataset(
    records: &[PairRecord],
    root: &Path,
    verifier: &dyn Verifier,
    opts: FilterOptions,
    clock: &dyn Clock,
) -> FilterOutcome {
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<Verdict>>> = records.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|s| {
        for _ in 0..opts.workers.max(1).min(records.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= records.len() {
                    break;
                }
                let v = verify_record(&records[i], root, verifier, opts.max_retries);
                *slots[i].lock().unwrap() = Some(v);
            });
        }
    });
    let mut accepted = Vec::new();
    let mut audit = Vec::with_capacity(records.len());
    for (record, slot) in records.iter().zip(slots) {
        let entry = match slot.into_inner().unwrap().expect("every record verified") {
            Verdict::Judged(r, attempts) => {
                let decision = gate(&r, opts.threshold);
                let (d, detail) = match decision {
                    GateDecision::Accepted => {
                        accepted.push(record.clone());
                        (AuditDecision::Accepted, None)
                    }
                    GateDecision::Rejected(reason) => (
                        AuditDecision::Rejected,
                        Some(serde_json::to_value(reason).unwrap().as_str().unwrap().to_string()),
                    ),
                };
                AuditEntry {
                    record_id: record.id.clone(),
                    explanation: Some(r.explanation),
                    passing: Some(r.passing),
                    confidence: Some(r.confidence),
                    decision: d,
                    detail,
                    attempts,
                    timestamp: clock.now(),
                }
            }
            Verdict::Failed(msg, attempts) => AuditEntry {
                record_id: record.id.clone(),
                explanation: None,
                passing: None,
                confidence: None,
                decision: AuditDecision::Error,
                detail: Some(msg),
                attempts,
                timestamp: clock.now(),
            },
        };
        audit.push(entry);
    }
    FilterOutcome { accepted, audit }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const PASSING: &str = include_str!("../tests/fixtures/verifier_passing.txt");

    #[test]
    fn passing_fixture_parses() {
        let r = parse_verifier_response(PASSING).unwrap();
        assert!(r.passing);
        assert_eq!(r.confidence, 100);
        assert!(r.explanation.contains("the first image says \"TASTE\" while the second image says\n\"TASTN\""));
    }

    #[test]
    fn failing_example_parses() {
        let text = "explanation: \"The text in the second image is completely missing.\"\npassing: false\nconfidence: 0\n";
        let r = parse_verifier_response(text).unwrap();
        assert_eq!(
            r,
            VerificationResult {
                explanation: "The text in the second image is completely missing.".into(),
                passing: false,
                confidence: 0,
            }
        );
    }

    #[test]
    fn shuffled_fields_and_prose() {
        let text = "Here is my assessment.\n\nConfidence: 100\nPASSING: True\nExplanation: Both images match\nexcept the text.\n";
        let r = parse_verifier_response(text).unwrap();
        assert_eq!(r.confidence, 100);
        assert!(r.passing);
        assert_eq!(r.explanation, "Both images match\nexcept the text.");
        let shuffled = "passing: true\nconfidence: 100\n".to_string() + PASSING.lines().take(4).collect::<Vec<_>>().join("\n").as_str();
        assert_eq!(parse_verifier_response(&shuffled).unwrap(), parse_verifier_response(PASSING).unwrap());
    }

    #[test]
    fn quoted_explanation_may_contain_labels() {
        let text = "explanation: \"says\npassing: false\"\npassing: true\nconfidence: 90";
        let r = parse_verifier_response(text).unwrap();
        assert!(r.passing);
        assert_eq!(r.explanation, "says\npassing: false");
    }

    #[test]
    fn errors_name_the_problem() {
        assert_eq!(
            parse_verifier_response("passing: true\nconfidence: 5"),
            Err(ParseError::MissingField("explanation"))
        );
        assert_eq!(
            parse_verifier_response("explanation: x\nconfidence: 5"),
            Err(ParseError::MissingField("passing"))
        );
        assert_eq!(
            parse_verifier_response("explanation: x\npassing: false"),
            Err(ParseError::MissingField("confidence"))
        );
        assert_eq!(
            parse_verifier_response("explanation: x\npassing: maybe\nconfidence: 5"),
            Err(ParseError::NonBoolean("maybe".into()))
        );
        assert_eq!(
            parse_verifier_response("explanation: x\npassing: true\nconfidence: 101"),
            Err(ParseError::OutOfRange(101))
        );
        assert_eq!(
            parse_verifier_response("explanation: x\npassing: true\nconfidence: -1"),
            Err(ParseError::OutOfRange(-1))
        );
        assert_eq!(
            parse_verifier_response("explanation: x\npassing: true\nconfidence: high"),
            Err(ParseError::NonInteger("high".into()))
        );
        assert_eq!(
            parse_verifier_response("explanation: \"open\npassing: true\nconfidence: 1"),
            Err(ParseError::UnterminatedQuote)
        );
    }

    #[test]
    fn prompt_contains_format_stanza() {
        let p = compose_verification_prompt();
        assert!(p.contains("passing: true or false indicating whether both checks are passed or not"));
        assert!(p.contains("explanation: thought process"));
        assert_eq!(p, compose_verification_prompt());
    }

    #[test]
    fn gate_cases() {
        let r = |passing, confidence| VerificationResult {
            explanation: "x".into(),
            passing,
            confidence,
        };
        assert_eq!(gate(&r(true, 100), 70), GateDecision::Accepted);
        assert_eq!(gate(&r(true, 70), 70), GateDecision::Rejected(RejectReason::LowConfidence));
        assert_eq!(gate(&r(false, 95), 70), GateDecision::Rejected(RejectReason::FailedCheck));
        assert_eq!(gate(&r(true, 100), 101), GateDecision::Rejected(RejectReason::LowConfidence));
    }

    proptest! {
        #[test]
        fn gate_is_monotone(passing: bool, c in 0u8..=100, d in 0u8..=100, t in -1i64..=101) {
            let a = VerificationResult { explanation: "e".into(), passing, confidence: c.min(d) };
            let b = VerificationResult { confidence: c.max(d), ..a.clone() };
            if gate(&a, t) == GateDecision::Accepted {
                prop_assert_eq!(gate(&b, t), GateDecision::Accepted);
            }
        }

        #[test]
        fn format_parse_roundtrip(
            explanation in "[ -~\n]{0,80}[!-~]",
            passing: bool,
            confidence in 0u8..=100,
        ) {
            let r = VerificationResult { explanation, passing, confidence };
            prop_assert_eq!(parse_verifier_response(&format_verifier_response(&r)).unwrap(), r);
        }
    }
}
