//! Canny edge detection: Gaussian blur, Sobel gradients, non-maximum
//! suppression and hysteresis thresholding.
//!
//! The input minimum is subtracted before filtering. Gradients do not depend
//! on it, and removing it keeps the arithmetic identical under global
//! intensity offsets.

use serde::{Deserialize, Serialize};

use crate::raster::{BitMap, GrayImage};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CannyParams {
    pub low: f64,
    pub high: f64,
    pub sigma: f64,
}

impl Default for CannyParams {
    fn default() -> Self {
        Self {
            low: 50.0,
            high: 150.0,
            sigma: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CannyError {
    #[error("thresholds must satisfy 0 <= low <= high, got low={low} high={high}")]
    InvalidThresholds { low: f64, high: f64 },
    #[error("blur sigma must be finite and nonnegative, got {0}")]
    InvalidSigma(f64),
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as isize;
    let k: Vec<f64> = (-r..=r)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable Gaussian blur with edge replication. `sigma == 0` is identity.
pub fn gaussian_blur(img: &GrayImage, sigma: f64) -> GrayImage {
    if sigma == 0.0 {
        return img.clone();
    }
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let (w, h) = (img.width as isize, img.height as isize);
    let mut tmp = GrayImage::filled(img.width, img.height, 0.0);
    for y in 0..h {
        for x in 0..w {
            let v = k
                .iter()
                .enumerate()
                .map(|(i, kv)| kv * img.get((x + i as isize - r).clamp(0, w - 1) as usize, y as usize))
                .sum();
            tmp.set(x as usize, y as usize, v);
        }
    }
    let mut out = GrayImage::filled(img.width, img.height, 0.0);
    for y in 0..h {
        for x in 0..w {
            let v = k
                .iter()
                .enumerate()
                .map(|(i, kv)| kv * tmp.get(x as usize, (y + i as isize - r).clamp(0, h - 1) as usize))
                .sum();
            out.set(x as usize, y as usize, v);
        }
    }
    out
}

/// Sobel gradients `(gx, gy)` at interior pixels; border pixels get zero.
pub fn sobel(img: &GrayImage) -> (GrayImage, GrayImage) {
    let (w, h) = (img.width, img.height);
    let mut gx = GrayImage::filled(w, h, 0.0);
    let mut gy = GrayImage::filled(w, h, 0.0);
    for y in 1..h.saturating_sub(1) {
        for x in 1..w.saturating_sub(1) {
            let p = |dx: isize, dy: isize| img.get((x as isize + dx) as usize, (y as isize + dy) as usize);
            gx.set(
                x,
                y,
                (p(1, -1) + 2.0 * p(1, 0) + p(1, 1)) - (p(-1, -1) + 2.0 * p(-1, 0) + p(-1, 1)),
            );
            gy.set(
                x,
                y,
                (p(-1, 1) + 2.0 * p(0, 1) + p(1, 1)) - (p(-1, -1) + 2.0 * p(0, -1) + p(1, -1)),
            );
        }
    }
    (gx, gy)
}

pub fn canny_edges(img: &GrayImage, params: CannyParams) -> Result<BitMap, CannyError> {
    let CannyParams { low, high, sigma } = params;
    if !(0.0 <= low && low <= high) {
        return Err(CannyError::InvalidThresholds { low, high });
    }
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(CannyError::InvalidSigma(sigma));
    }
    let (w, h) = (img.width, img.height);
    let min = img.values.iter().copied().fold(f64::INFINITY, f64::min);
    let shifted = GrayImage {
        width: w,
        height: h,
        values: img.values.iter().map(|v| v - min).collect(),
    };
    let blurred = gaussian_blur(&shifted, sigma);
    let (gx, gy) = sobel(&blurred);
    let mag: Vec<f64> = gx.values.iter().zip(&gy.values).map(|(a, b)| a.hypot(*b)).collect();

    // Non-maximum suppression along the gradient direction, quantised to
    // 0, 45, 90 and 135 degrees. Ties are kept.
    let mut nms = vec![0.0; w * h];
    for y in 1..h.saturating_sub(1) {
        for x in 1..w.saturating_sub(1) {
            let i = y * w + x;
            let m = mag[i];
            if m == 0.0 {
                continue;
            }
            let angle = gy.values[i].atan2(gx.values[i]).to_degrees().rem_euclid(180.0);
            let (dx, dy): (isize, isize) = if !(22.5..157.5).contains(&angle) {
                (1, 0)
            } else if angle < 67.5 {
                (1, 1)
            } else if angle < 112.5 {
                (0, 1)
            } else {
                (-1, 1)
            };
            let a = mag[((y as isize + dy) as usize) * w + (x as isize + dx) as usize];
            let b = mag[((y as isize - dy) as usize) * w + (x as isize - dx) as usize];
            if m >= a && m >= b {
                nms[i] = m;
            }
        }
    }

    // Hysteresis: grow strong pixels through 8-connected weak pixels.
    let mut out = BitMap::new(w, h);
    let mut stack: Vec<usize> = (0..w * h).filter(|&i| nms[i] >= high && nms[i] > 0.0).collect();
    for &i in &stack {
        out.bits[i] = true;
    }
    while let Some(i) = stack.pop() {
        let (x, y) = ((i % w) as isize, (i / w) as isize);
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if !out.bits[j] && nms[j] >= low && nms[j] > 0.0 {
                    out.bits[j] = true;
                    stack.push(j);
                }
            }
        }
    }
    Ok(out)
}
