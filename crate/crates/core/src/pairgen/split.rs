//! Splitting a diptych into its two panels at the detected seam.

use serde::{Deserialize, Serialize};

use super::canny::{canny_edges, CannyError, CannyParams};
use crate::raster::RgbImage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMethod {
    Edge,
    Fallback,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitParams {
    pub canny: CannyParams,
    /// Fraction of the width, centred, searched for the seam.
    pub band_fraction: f64,
    /// A column must have edges in more than this fraction of rows.
    pub threshold: f64,
    /// Columns within this distance of the best one that also pass the
    /// threshold are treated as the same seam.
    pub companion_radius: usize,
}

impl Default for SplitParams {
    fn default() -> Self {
        Self {
            canny: CannyParams::default(),
            band_fraction: 0.2,
            threshold: 0.6,
            companion_radius: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitMeta {
    pub split_x: usize,
    pub method: SplitMethod,
    /// Edge-row fraction of the best column in the search band.
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub left: RgbImage,
    pub right: RgbImage,
    pub meta: SplitMeta,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SplitError {
    #[error("image {width}x{height} is too small to split")]
    Degenerate { width: usize, height: usize },
    #[error(transparent)]
    Canny(#[from] CannyError),
}

/// Column range `[lo, hi)` searched for the seam.
pub fn search_band(width: usize, band_fraction: f64) -> (usize, usize) {
    let half = band_fraction / 2.0;
    let lo = ((0.5 - half) * width as f64).floor() as usize;
    let hi = (((0.5 + half) * width as f64).ceil() as usize).min(width);
    (lo, hi.max(lo + 1))
}

pub fn split_diptych(image: &RgbImage, params: &SplitParams) -> Result<Split, SplitError> {
    let (w, h) = (image.width, image.height);
    if w < 2 || h == 0 {
        return Err(SplitError::Degenerate { width: w, height: h });
    }
    let edges = canny_edges(&image.to_gray(), params.canny)?;
    let (lo, hi) = search_band(w, params.band_fraction);
    let score = |x: usize| (0..h).filter(|&y| edges.get(x, y)).count() as f64 / h as f64;
    let scores: Vec<f64> = (lo..hi).map(score).collect();
    let (best_i, best) = scores
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, s)| if s > acc.1 { (i, s) } else { acc });
    let meta = if best > params.threshold {
        let bx = lo + best_i;
        let r = params.companion_radius;
        let close: Vec<usize> = (bx.saturating_sub(r)..=(bx + r).min(w - 1))
            .filter(|&x| x == bx || score(x) > params.threshold)
            .collect();
        let (a, b) = (close[0], close[close.len() - 1]);
        SplitMeta {
            split_x: ((a + b + 1) / 2).clamp(1, w - 1),
            method: SplitMethod::Edge,
            confidence: best,
        }
    } else {
        SplitMeta {
            split_x: w / 2,
            method: SplitMethod::Fallback,
            confidence: best.max(0.0),
        }
    };
    Ok(Split {
        left: image.crop_columns(0, meta.split_x),
        right: image.crop_columns(meta.split_x, w),
        meta,
    })
}
