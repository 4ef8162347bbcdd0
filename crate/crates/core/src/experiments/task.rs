//! A small glyph-placement task on latent grids.
//!
//! Each glyph is a balanced `m x m` pattern of +1/-1 values placed in a fixed
//! central box over a smooth seeded background. Its corrupted twin swaps a
//! few +1/-1 pixel pairs, so the two share the same value histogram and
//! differ only in arrangement.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffusion::{Condition, DiffusionError, LatentImage, Result};
use crate::dpo::{PreferencePair, RegionMask};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TaskConfig {
    pub width: usize,
    pub height: usize,
    pub num_glyphs: usize,
    pub motif_size: usize,
    /// Number of +1/-1 pixel pairs exchanged to build the corrupted motif.
    pub swaps: usize,
    /// Peak absolute background value.
    pub background_amplitude: f64,
    pub seed: u64,
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self {
            width: 16,
            height: 16,
            num_glyphs: 4,
            motif_size: 4,
            swaps: 2,
            background_amplitude: 0.5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Motif {
    /// Row-major `m x m` values.
    pub correct: Vec<f64>,
    pub corrupted: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTask {
    pub config: TaskConfig,
    /// Top-left corner of the target box.
    pub origin: (usize, usize),
    pub motifs: Vec<Motif>,
}

/// How the loser's background relates to the winner's.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairKind {
    /// Same background on both sides.
    Diptych,
    /// Independently seeded backgrounds.
    BackgroundVaried,
}

impl SyntheticTask {
    pub fn new(config: TaskConfig) -> Result<Self> {
        let m = config.motif_size;
        if m == 0 || m > config.width || m > config.height {
            return Err(DiffusionError::Config(format!(
                "motif size {m} does not fit a {}x{} image",
                config.width, config.height
            )));
        }
        if config.num_glyphs == 0 {
            return Err(DiffusionError::Config("need at least one glyph".into()));
        }
        let n = m * m;
        let half = n / 2;
        if config.swaps == 0 || config.swaps > half.min(n - half) {
            return Err(DiffusionError::Config(format!(
                "swaps must lie in 1..={} for a {m}x{m} motif",
                half.min(n - half)
            )));
        }
        let mut rng = seed::rng_from(config.seed, &[0x7a5c]);
        let mut motifs: Vec<Motif> = Vec::with_capacity(config.num_glyphs);
        let mut guard = 0;
        while motifs.len() < config.num_glyphs {
            guard += 1;
            if guard > 10_000 {
                return Err(DiffusionError::Config("could not draw distinct motifs".into()));
            }
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            let mut correct = vec![-1.0; n];
            for &i in &order[..half] {
                correct[i] = 1.0;
            }
            let mut pos: Vec<usize> = (0..n).filter(|&i| correct[i] > 0.0).collect();
            let mut neg: Vec<usize> = (0..n).filter(|&i| correct[i] < 0.0).collect();
            pos.shuffle(&mut rng);
            neg.shuffle(&mut rng);
            let mut corrupted = correct.clone();
            for k in 0..config.swaps {
                corrupted[pos[k]] = -1.0;
                corrupted[neg[k]] = 1.0;
            }
            let clash = motifs
                .iter()
                .any(|o| o.correct == correct || o.corrupted == correct || o.correct == corrupted);
            if !clash {
                motifs.push(Motif { correct, corrupted });
            }
        }
        let origin = ((config.width - m) / 2, (config.height - m) / 2);
        Ok(Self {
            config,
            origin,
            motifs,
        })
    }

    pub fn num_glyphs(&self) -> usize {
        self.motifs.len()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.config.width, self.config.height)
    }

    pub fn mask(&self) -> RegionMask {
        let m = self.config.motif_size;
        RegionMask::from_box(self.config.width, self.config.height, self.origin.0, self.origin.1, m, m)
    }

    fn check_glyph(&self, glyph: usize) -> Result<()> {
        if glyph >= self.motifs.len() {
            return Err(DiffusionError::InvalidCondition {
                token: glyph as u32,
                vocab: self.motifs.len() as u32,
            });
        }
        Ok(())
    }

    /// Smooth background: a sum of three seeded plane waves scaled to the
    /// configured amplitude.
    pub fn background(&self, bg_seed: u64) -> LatentImage {
        let (w, h) = self.shape();
        let mut rng = seed::rng_from(bg_seed, &[0xb6]);
        let waves: Vec<(f64, f64, f64, f64)> = (0..3)
            .map(|_| {
                (
                    rng.random_range(0..4) as f64 * std::f64::consts::TAU / w as f64,
                    rng.random_range(0..4) as f64 * std::f64::consts::TAU / h as f64,
                    rng.random_range(0.0..std::f64::consts::TAU),
                    rng.random_range(0.3..1.0),
                )
            })
            .collect();
        let total: f64 = waves.iter().map(|w| w.3).sum();
        let mut img = LatentImage::zeros(w, h);
        for y in 0..h {
            for x in 0..w {
                let v: f64 = waves
                    .iter()
                    .map(|(kx, ky, ph, a)| a * (kx * x as f64 + ky * y as f64 + ph).cos())
                    .sum();
                img.set(x, y, self.config.background_amplitude * v / total);
            }
        }
        img
    }

    /// Writes the glyph's correct or corrupted motif into the target box.
    pub fn stamp(&self, img: &mut LatentImage, glyph: usize, correct: bool) -> Result<()> {
        self.check_glyph(glyph)?;
        let m = self.config.motif_size;
        let motif = &self.motifs[glyph];
        let vals = if correct { &motif.correct } else { &motif.corrupted };
        for dy in 0..m {
            for dx in 0..m {
                img.set(self.origin.0 + dx, self.origin.1 + dy, vals[dy * m + dx]);
            }
        }
        Ok(())
    }

    pub fn render(&self, bg_seed: u64, glyph: usize, correct: bool) -> Result<LatentImage> {
        let mut img = self.background(bg_seed);
        self.stamp(&mut img, glyph, correct)?;
        Ok(img)
    }

    /// Squared distances of the target box to the correct and corrupted
    /// motifs.
    pub fn region_distances(&self, sample: &LatentImage, glyph: usize) -> Result<(f64, f64)> {
        self.check_glyph(glyph)?;
        if sample.shape() != self.shape() {
            return Err(DiffusionError::ShapeMismatch {
                expected: self.shape(),
                got: sample.shape(),
            });
        }
        let m = self.config.motif_size;
        let motif = &self.motifs[glyph];
        let (mut dc, mut dk) = (0.0, 0.0);
        for dy in 0..m {
            for dx in 0..m {
                let v = sample.get(self.origin.0 + dx, self.origin.1 + dy);
                dc += (v - motif.correct[dy * m + dx]).powi(2);
                dk += (v - motif.corrupted[dy * m + dx]).powi(2);
            }
        }
        Ok((dc, dk))
    }

    /// True when the target box is strictly closer to the correct motif.
    pub fn is_correct(&self, sample: &LatentImage, glyph: usize) -> Result<bool> {
        let (dc, dk) = self.region_distances(sample, glyph)?;
        Ok(dc < dk)
    }
}

/// A winner/loser pair for `glyph`. The winner carries the correct motif on
/// background `bg_seed`; the loser carries the corrupted motif on the same
/// background (diptych) or on an independently seeded one.
pub fn gen_synthetic_pair(
    task: &SyntheticTask,
    bg_seed: u64,
    glyph: usize,
    kind: PairKind,
) -> Result<PreferencePair> {
    let x_w = task.render(bg_seed, glyph, true)?;
    let loser_bg = match kind {
        PairKind::Diptych => bg_seed,
        PairKind::BackgroundVaried => seed::derive_seed(bg_seed, &[0x7a71ed]),
    };
    let x_l = task.render(loser_bg, glyph, false)?;
    PreferencePair::new(x_w, x_l, task.mask(), Condition::token(glyph as u32))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn task() -> SyntheticTask {
        SyntheticTask::new(TaskConfig::default()).unwrap()
    }

    #[test]
    fn motifs_are_balanced_and_distinct() {
        let t = task();
        assert_eq!(t.origin, (6, 6));
        for m in &t.motifs {
            assert_eq!(m.correct.iter().filter(|v| **v > 0.0).count(), 8);
            assert_eq!(m.corrupted.iter().filter(|v| **v > 0.0).count(), 8);
            let diff = m.correct.iter().zip(&m.corrupted).filter(|(a, b)| a != b).count();
            assert_eq!(diff, 4);
        }
    }

    #[test]
    fn diptych_pair_backgrounds_are_identical() {
        let t = task();
        let p = gen_synthetic_pair(&t, 9, 1, PairKind::Diptych).unwrap();
        assert!(p.background_identical());
        assert_ne!(p.x_w, p.x_l);
        assert_eq!(p, gen_synthetic_pair(&t, 9, 1, PairKind::Diptych).unwrap());
    }

    #[test]
    fn varied_pairs_differ_on_most_background() {
        let t = task();
        for s in 0..100 {
            let p = gen_synthetic_pair(&t, s, (s % 4) as usize, PairKind::BackgroundVaried).unwrap();
            let bg: Vec<usize> = (0..256).filter(|&i| !p.mask.is_target(i % 16, i / 16)).collect();
            let differ = bg.iter().filter(|&&i| p.x_w.values[i] != p.x_l.values[i]).count();
            assert!(differ * 2 > bg.len(), "seed {s}: {differ}/{}", bg.len());
        }
    }

    #[test]
    fn unknown_glyph_is_rejected() {
        assert!(matches!(
            gen_synthetic_pair(&task(), 0, 4, PairKind::Diptych),
            Err(DiffusionError::InvalidCondition { .. })
        ));
    }

    #[test]
    fn classification_is_strict() {
        let t = task();
        let w = t.render(3, 0, true).unwrap();
        let l = t.render(3, 0, false).unwrap();
        assert!(t.is_correct(&w, 0).unwrap());
        assert!(!t.is_correct(&l, 0).unwrap());
        // Midpoint is equidistant and counts as incorrect.
        let mid = LatentImage::new(16, 16, w.values.iter().zip(&l.values).map(|(a, b)| (a + b) / 2.0).collect()).unwrap();
        assert!(!t.is_correct(&mid, 0).unwrap());
    }

    #[test]
    fn background_stays_within_amplitude() {
        let t = task();
        for s in 0..20 {
            assert!(t.background(s).values.iter().all(|v| v.abs() <= 0.5 + 1e-12));
        }
    }
}
