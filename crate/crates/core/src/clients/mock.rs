//! Deterministic offline stand-ins for every service.
//!
//! The mocks are oracles over the synthetic data they produce. Corruption
//! knobs inject specific failure modes on demand so downstream decisions can
//! be asserted exactly.

use std::sync::atomic::{AtomicU32, Ordering};

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ClientError, ClientResult, ImageModel, Ocr, TextModel, Verifier};
use crate::filter::{format_verifier_response, VerificationResult};
use crate::font::{self, INK};
use crate::pairgen::prompts::{parse_diptych_prompt, Orientation};
use crate::raster::{Rgb, RgbImage};
use crate::seed;

// ---------------------------------------------------------------- text ----

const TEXTURES: &[&str] = &[
    "brushed", "weathered", "polished", "grainy", "speckled", "woven", "hammered", "frosted",
    "mottled", "satin",
];
const MATERIALS: &[&str] = &[
    "copper", "slate", "linen", "marble", "cedar", "porcelain", "concrete", "velvet", "paper",
    "glass",
];
const COLORS: &[&str] = &[
    "amber", "teal", "ochre", "indigo", "sage", "coral", "ivory", "charcoal", "plum", "mint",
];
const SHAPES: &[&str] = &[
    "circular", "wavy", "diagonal", "hexagonal", "scalloped", "rippled", "dotted", "curved",
];
const LIGHTS: &[&str] = &["soft morning", "warm evening", "diffuse studio", "cool overcast"];

/// Emits `generated_background: ...` descriptions assembled from fixed word
/// lists, seeded by the prompt. Words named in the request's "Do not include
/// X or Y" clause never appear, case-insensitively.
#[derive(Debug, Clone, Default)]
pub struct MockTextModel {
    pub seed: u64,
}

fn forbidden_words(prompt: &str) -> Vec<String> {
    let words: Vec<&str> = prompt.split_whitespace().collect();
    for w in words.windows(6) {
        if w[0] == "Do" && w[1] == "not" && w[2] == "include" && w[4] == "or" {
            return vec![w[3].to_ascii_lowercase(), w[5].to_ascii_lowercase()];
        }
    }
    Vec::new()
}

impl TextModel for MockTextModel {
    fn generate(&self, prompt: &str) -> ClientResult<String> {
        if prompt.trim().is_empty() {
            return Err(ClientError::InvalidRequest("empty prompt".into()));
        }
        let banned = forbidden_words(prompt);
        let clean = |s: &str| !banned.iter().any(|b| s.to_ascii_lowercase().contains(b.as_str()));
        for attempt in 0..64u64 {
            let mut rng = seed::rng_from(self.seed, &[seed::stable_hash(prompt.as_bytes()), attempt]);
            let mut pick = |list: &[&'static str]| list[rng.random_range(0..list.len())];
            let (t, m, c1, c2, s, l) = (
                pick(TEXTURES),
                pick(MATERIALS),
                pick(COLORS),
                pick(COLORS),
                pick(SHAPES),
                pick(LIGHTS),
            );
            let text = format!(
                "A {t} {m} surface in {c1} and {c2} tones, with {s} shapes under {l} light. \
                 The lettering sits in the centre and stays crisp and dark."
            );
            if clean(&text) {
                return Ok(format!("generated_background: {text}"));
            }
        }
        Err(ClientError::MalformedResponse(
            "no description avoids the requested words".into(),
        ))
    }
}

// --------------------------------------------------------------- image ----

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Corruption {
    None,
    /// The loser panel carries no text.
    NoText,
    /// The loser panel is drawn on an unrelated background.
    DifferentBackground,
    /// Both panels carry the correct word.
    SameText,
    /// The dark separator between panels is omitted.
    NoSeam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorruptionKnobs {
    /// Applied to every call when set.
    pub force: Option<Corruption>,
    /// Probability that a call is corrupted, decided from its seed.
    pub rate: f64,
    /// Kinds drawn from, uniformly, when a call is corrupted.
    pub kinds: Vec<Corruption>,
}

impl Default for CorruptionKnobs {
    fn default() -> Self {
        Self {
            force: None,
            rate: 0.0,
            kinds: vec![
                Corruption::NoText,
                Corruption::DifferentBackground,
                Corruption::SameText,
            ],
        }
    }
}

impl CorruptionKnobs {
    /// The corruption applied to a call with this seed.
    pub fn corruption_for(&self, rng_seed: u64) -> Corruption {
        if let Some(c) = self.force {
            return c;
        }
        if self.rate <= 0.0 || self.kinds.is_empty() {
            return Corruption::None;
        }
        let mut rng = seed::rng_from(rng_seed, &[0xc022]);
        if rng.random::<f64>() < self.rate {
            self.kinds[rng.random_range(0..self.kinds.len())]
        } else {
            Corruption::None
        }
    }
}

pub const SEAM_COLOR: Rgb = [8, 8, 8];
pub const BG_MIN: u8 = 100;
pub const BG_MAX: u8 = 240;

/// A seeded panel background: vertical colour gradient, a horizontal ripple
/// and a few discs. Periodic in x with period `width`, so panels placed side
/// by side continue each other seamlessly. Channels stay within
/// `[BG_MIN, BG_MAX]`, so the background never contains ink or seam colours.
pub fn procedural_background(width: usize, height: usize, bg_seed: u64) -> RgbImage {
    let mut rng = seed::rng_from(bg_seed, &[0xb9]);
    let color = |rng: &mut rand_chacha::ChaCha8Rng| -> [f64; 3] {
        [0; 3].map(|_| rng.random_range(110.0..230.0))
    };
    let top = color(&mut rng);
    let bottom = color(&mut rng);
    let amp: [f64; 3] = [0; 3].map(|_| rng.random_range(0.0..15.0));
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    let discs: Vec<(f64, f64, f64, [f64; 3])> = (0..rng.random_range(1..=2))
        .map(|_| {
            let r = rng.random_range(4.0..9.0);
            let cx = rng.random_range(0.0..width as f64);
            let cy = rng.random_range(r..(height as f64 - r).max(r + 1.0));
            (cx, cy, r, color(&mut rng))
        })
        .collect();
    let mut img = RgbImage::filled(width, height, [0; 3]);
    for y in 0..height {
        let t = if height > 1 { y as f64 / (height - 1) as f64 } else { 0.0 };
        for x in 0..width {
            let wave = (std::f64::consts::TAU * x as f64 / width as f64 + phase).sin();
            let mut px = [0.0; 3];
            for ch in 0..3 {
                px[ch] = top[ch] * (1.0 - t) + bottom[ch] * t + amp[ch] * wave;
            }
            for (cx, cy, r, c) in &discs {
                let dx = (x as f64 - cx).abs();
                let dx = dx.min(width as f64 - dx);
                let dy = y as f64 - cy;
                if dx * dx + dy * dy <= r * r {
                    px = *c;
                }
            }
            img.set(x, y, px.map(|v| v.round().clamp(BG_MIN as f64, BG_MAX as f64) as u8));
        }
    }
    img
}

#[derive(Debug, Clone)]
pub struct MockImageModel {
    pub panel_width: usize,
    pub panel_height: usize,
    pub knobs: CorruptionKnobs,
}

impl Default for MockImageModel {
    fn default() -> Self {
        Self {
            panel_width: 64,
            panel_height: 64,
            knobs: CorruptionKnobs::default(),
        }
    }
}

impl MockImageModel {
    fn draw_panel(&self, img: &mut RgbImage, x0: usize, bg: &RgbImage, text: Option<&str>) {
        for y in 0..self.panel_height {
            for x in 0..self.panel_width {
                img.set(x0 + x, y, bg.get(x, y));
            }
        }
        if let Some(text) = text {
            let (tx, ty) = font::centred_origin(text, x0, 0, self.panel_width, self.panel_height);
            font::render_text(img, text, tx, ty, INK);
        }
    }
}

impl ImageModel for MockImageModel {
    fn generate_diptych(&self, prompt: &str, rng_seed: u64) -> ClientResult<RgbImage> {
        let parsed = parse_diptych_prompt(prompt)
            .ok_or_else(|| ClientError::InvalidRequest("prompt lacks diptych slot markers".into()))?;
        let corruption = self.knobs.corruption_for(rng_seed);
        let bg_seed = seed::derive_seed(rng_seed, &[seed::stable_hash(parsed.background.as_bytes())]);
        let (pw, ph) = (self.panel_width, self.panel_height);
        let bg = procedural_background(pw, ph, bg_seed);
        let loser_bg = match corruption {
            Corruption::DifferentBackground => procedural_background(pw, ph, seed::derive_seed(bg_seed, &[1])),
            _ => bg.clone(),
        };
        let loser_text = match corruption {
            Corruption::NoText => None,
            Corruption::SameText => Some(parsed.correct.as_str()),
            _ => Some(parsed.misspelled.as_str()),
        };
        let mut img = RgbImage::filled(2 * pw, ph, [0; 3]);
        let (winner_x, loser_x) = match parsed.orientation {
            Orientation::LeftCorrect => (0, pw),
            Orientation::RightCorrect => (pw, 0),
        };
        self.draw_panel(&mut img, winner_x, &bg, Some(&parsed.correct));
        self.draw_panel(&mut img, loser_x, &loser_bg, loser_text);
        if corruption != Corruption::NoSeam {
            for y in 0..ph {
                img.set(pw - 1, y, SEAM_COLOR);
                img.set(pw, y, SEAM_COLOR);
            }
        }
        Ok(img)
    }
}

// ------------------------------------------------------------ verifier ----

/// Checks what the verification prompt asks for, exactly: backgrounds must
/// match outside the text boxes (up to a +-2 px alignment shift and a 2 px
/// border), both panels must carry text, and the texts must differ.
#[derive(Debug, Clone)]
pub struct MockVerifier {
    /// Maximum fraction of compared background pixels allowed to differ.
    pub max_bg_diff: f64,
    pub border: usize,
    pub max_shift: isize,
}

impl Default for MockVerifier {
    fn default() -> Self {
        Self {
            max_bg_diff: 0.01,
            border: 2,
            max_shift: 2,
        }
    }
}

type Bbox = Option<(usize, usize, usize, usize)>;

fn in_box(b: Bbox, x: isize, y: isize) -> bool {
    match b {
        Some((x0, y0, x1, y1)) => {
            x >= x0 as isize - 1 && x <= x1 as isize + 1 && y >= y0 as isize - 1 && y <= y1 as isize + 1
        }
        None => false,
    }
}

impl MockVerifier {
    /// Smallest background mismatch fraction over all alignment shifts.
    pub fn background_difference(&self, a: &RgbImage, b: &RgbImage) -> f64 {
        let ba = font::bounding_box(&font::ink_mask(a));
        let bb = font::bounding_box(&font::ink_mask(b));
        let m = self.border as isize;
        let inside = |img: &RgbImage, x: isize, y: isize| {
            x >= m && y >= m && x < img.width as isize - m && y < img.height as isize - m
        };
        let mut best = 1.0f64;
        for dy in -self.max_shift..=self.max_shift {
            for dx in -self.max_shift..=self.max_shift {
                let (mut total, mut diff) = (0usize, 0usize);
                for y in 0..a.height as isize {
                    for x in 0..a.width as isize {
                        let (bx, by) = (x + dx, y + dy);
                        if !inside(a, x, y) || !inside(b, bx, by) || in_box(ba, x, y) || in_box(bb, bx, by) {
                            continue;
                        }
                        total += 1;
                        if a.get(x as usize, y as usize) != b.get(bx as usize, by as usize) {
                            diff += 1;
                        }
                    }
                }
                if total > 0 {
                    best = best.min(diff as f64 / total as f64);
                }
            }
        }
        best
    }

    pub fn judge(&self, image_w: &RgbImage, image_l: &RgbImage) -> VerificationResult {
        let fail = |explanation: String| VerificationResult {
            explanation,
            passing: false,
            confidence: 0,
        };
        let (tw, tl) = (font::read_text(image_w), font::read_text(image_l));
        match (tw.is_empty(), tl.is_empty()) {
            (true, true) => return fail("There is no text present in either image.".into()),
            (true, false) => return fail("The text in the first image is completely missing.".into()),
            (false, true) => return fail("The text in the second image is completely missing.".into()),
            _ => {}
        }
        let d = self.background_difference(image_w, image_l);
        if d > self.max_bg_diff {
            return fail(format!(
                "The backgrounds are different: {:.1}% of the compared background pixels do not match.",
                100.0 * d
            ));
        }
        if tw == tl {
            return fail(format!(
                "The text \"{tw}\" is present in both images. The text itself is identical in both images."
            ));
        }
        VerificationResult {
            explanation: format!(
                "Both images have the same background. The text is slightly different; the first image says \"{tw}\" while the second image says \"{tl}\"."
            ),
            passing: true,
            confidence: 100,
        }
    }
}

impl Verifier for MockVerifier {
    fn verify(&self, image_w: &RgbImage, image_l: &RgbImage, _prompt: &str) -> ClientResult<String> {
        Ok(format_verifier_response(&self.judge(image_w, image_l)))
    }
}

// ----------------------------------------------------------------- ocr ----

/// Template-matching reader for the built-in font. With `noise > 0`,
/// `round(noise * n)` of the `n` decoded non-space characters are replaced,
/// at positions and with characters drawn from a stream seeded by the image.
#[derive(Debug, Clone, Default)]
pub struct MockOcr {
    pub seed: u64,
    pub noise: f64,
}

/// Replaces `round(rate * n)` distinct non-space characters of `text`.
pub fn corrupt_text(text: &str, rate: f64, rng_seed: u64) -> String {
    let mut chars: Vec<char> = text.chars().collect();
    let slots: Vec<usize> = (0..chars.len()).filter(|&i| chars[i] != ' ').collect();
    let m = ((rate * slots.len() as f64).round() as usize).min(slots.len());
    if m == 0 {
        return text.to_string();
    }
    let alphabet: Vec<char> = font::alphabet().collect();
    let mut rng = seed::rng_from(rng_seed, &[0x0c2]);
    for k in index::sample(&mut rng, slots.len(), m).into_vec() {
        let i = slots[k];
        chars[i] = loop {
            let c = alphabet[rng.random_range(0..alphabet.len())];
            if c != chars[i] {
                break c;
            }
        };
    }
    chars.into_iter().collect()
}

impl Ocr for MockOcr {
    fn read(&self, image: &RgbImage) -> ClientResult<String> {
        let text = font::read_text(image);
        if self.noise <= 0.0 {
            return Ok(text);
        }
        let h = seed::stable_hash(image.pixels.as_flattened());
        Ok(corrupt_text(&text, self.noise, seed::derive_seed(self.seed, &[h])))
    }
}

// ----------------------------------------------------- failure injection ----

/// Fails the first `failures` calls with `error`, then delegates.
#[derive(Debug)]
pub struct FailFirst<T> {
    pub inner: T,
    remaining: AtomicU32,
    error: ClientError,
}

impl<T> FailFirst<T> {
    pub fn new(inner: T, failures: u32, error: ClientError) -> Self {
        Self {
            inner,
            remaining: AtomicU32::new(failures),
            error,
        }
    }

    fn tick(&self) -> ClientResult<()> {
        let took = self
            .remaining
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1))
            .is_ok();
        if took {
            Err(self.error.clone())
        } else {
            Ok(())
        }
    }
}

impl<T: TextModel> TextModel for FailFirst<T> {
    fn generate(&self, prompt: &str) -> ClientResult<String> {
        self.tick()?;
        self.inner.generate(prompt)
    }
}

impl<T: ImageModel> ImageModel for FailFirst<T> {
    fn generate_diptych(&self, prompt: &str, rng_seed: u64) -> ClientResult<RgbImage> {
        self.tick()?;
        self.inner.generate_diptych(prompt, rng_seed)
    }
}

impl<T: Verifier> Verifier for FailFirst<T> {
    fn verify(&self, a: &RgbImage, b: &RgbImage, prompt: &str) -> ClientResult<String> {
        self.tick()?;
        self.inner.verify(a, b, prompt)
    }
}

impl<T: Ocr> Ocr for FailFirst<T> {
    fn read(&self, image: &RgbImage) -> ClientResult<String> {
        self.tick()?;
        self.inner.read(image)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clients::retry::with_retries;
    use crate::pairgen::{compose_background_request, compose_diptych_prompt, split_diptych, SplitParams, WordPair};

    fn taste() -> WordPair {
        WordPair {
            correct: "TASTE".into(),
            misspelled: "TASTN".into(),
            edits: vec![],
        }
    }

    fn diptych(knobs: CorruptionKnobs, orientation: Orientation, s: u64) -> RgbImage {
        let p = compose_diptych_prompt("A slate wall.", &taste(), orientation).unwrap();
        MockImageModel { knobs, ..Default::default() }.generate_diptych(&p, s).unwrap()
    }

    #[test]
    fn text_mock_avoids_both_words() {
        let m = MockTextModel { seed: 7 };
        let out = m.generate(&compose_background_request(&taste())).unwrap();
        assert!(out.starts_with("generated_background: "));
        let lower = out.to_lowercase();
        assert!(!lower.contains("taste") && !lower.contains("tastn"));
        // A word that collides with the vocabulary is avoided too.
        let pair = WordPair { correct: "SLATE".into(), misspelled: "SLATT".into(), edits: vec![] };
        for s in 0..50 {
            let out = MockTextModel { seed: s }.generate(&compose_background_request(&pair)).unwrap();
            assert!(!out.to_lowercase().contains("slate"));
        }
    }

    #[test]
    fn transient_failures_are_retried() {
        let m = FailFirst::new(MockTextModel { seed: 7 }, 2, ClientError::Transport("x".into()));
        let r = with_retries(3, |_| m.generate("hello")).unwrap();
        assert_eq!(r.attempts, 3);
        let m = FailFirst::new(MockTextModel { seed: 7 }, 9, ClientError::Timeout("x".into()));
        let e = with_retries(3, |_| m.generate("hello")).unwrap_err();
        assert_eq!(e.attempts, 4);
        assert!(matches!(e.error, ClientError::Timeout(_)));
    }

    #[test]
    fn panels_match_outside_text() {
        let img = diptych(CorruptionKnobs::default(), Orientation::LeftCorrect, 3);
        let (l, r) = (img.crop_columns(0, 64), img.crop_columns(64, 128));
        let (bl, br) = (
            font::bounding_box(&font::ink_mask(&l)).unwrap(),
            font::bounding_box(&font::ink_mask(&r)).unwrap(),
        );
        for y in 0..64 {
            for x in 1..63 {
                let inside = |b: (usize, usize, usize, usize)| x >= b.0 && x <= b.2 && y >= b.1 && y <= b.3;
                if !inside(bl) && !inside(br) {
                    assert_eq!(l.get(x, y), r.get(x, y));
                }
            }
        }
        assert_eq!(font::read_text(&l), "TASTE");
        assert_eq!(font::read_text(&r), "TASTN");
    }

    #[test]
    fn orientation_controls_winner_panel() {
        let img = diptych(CorruptionKnobs::default(), Orientation::RightCorrect, 3);
        assert_eq!(font::read_text(&img.crop_columns(64, 128)), "TASTE");
        assert_eq!(font::read_text(&img.crop_columns(0, 64)), "TASTN");
    }

    #[test]
    fn image_mock_is_deterministic() {
        let a = diptych(CorruptionKnobs::default(), Orientation::LeftCorrect, 11);
        assert_eq!(a, diptych(CorruptionKnobs::default(), Orientation::LeftCorrect, 11));
        assert_ne!(a, diptych(CorruptionKnobs::default(), Orientation::LeftCorrect, 12));
    }

    #[test]
    fn no_seam_forces_fallback_split() {
        let knobs = CorruptionKnobs { force: Some(Corruption::NoSeam), ..Default::default() };
        let s = split_diptych(&diptych(knobs, Orientation::LeftCorrect, 5), &SplitParams::default()).unwrap();
        assert_eq!(s.meta.method, crate::pairgen::SplitMethod::Fallback);
        assert_eq!(s.meta.split_x, 64);
    }

    fn verdict(c: Corruption) -> VerificationResult {
        let knobs = CorruptionKnobs { force: Some(c), ..Default::default() };
        let img = diptych(knobs, Orientation::LeftCorrect, 21);
        let s = split_diptych(&img, &SplitParams::default()).unwrap();
        MockVerifier::default().judge(&s.left, &s.right)
    }

    #[test]
    fn verifier_verdicts_per_corruption() {
        let ok = verdict(Corruption::None);
        assert!(ok.passing && ok.confidence == 100, "{ok:?}");
        let missing = verdict(Corruption::NoText);
        assert_eq!(missing.explanation, "The text in the second image is completely missing.");
        assert!(!missing.passing && missing.confidence == 0);
        assert!(!verdict(Corruption::DifferentBackground).passing);
        assert!(verdict(Corruption::SameText).explanation.contains("identical"));
        assert!(verdict(Corruption::NoSeam).passing);
    }

    #[test]
    fn corruption_rate_is_seeded() {
        let knobs = CorruptionKnobs { rate: 0.3, ..Default::default() };
        let hits = (0..2000).filter(|s| knobs.corruption_for(*s) != Corruption::None).count();
        assert!((500..700).contains(&hits), "{hits}");
        assert_eq!(knobs.corruption_for(17), knobs.corruption_for(17));
    }

    #[test]
    fn ocr_roundtrip_and_noise() {
        let mut img = RgbImage::filled(40, 12, [180; 3]);
        font::render_text(&mut img, "BOLD", 4, 2, INK);
        assert_eq!(MockOcr::default().read(&img).unwrap(), "BOLD");
        assert_eq!(MockOcr::default().read(&RgbImage::filled(8, 8, [150; 3])).unwrap(), "");
        let mut img = RgbImage::filled(40, 12, [180; 3]);
        font::render_text(&mut img, "TASTE", 4, 2, INK);
        let noisy = MockOcr { seed: 3, noise: 0.2 }.read(&img).unwrap();
        let diffs = noisy.chars().zip("TASTE".chars()).filter(|(a, b)| a != b).count();
        assert_eq!(noisy.len(), 5);
        assert_eq!(diffs, 1);
    }
}
