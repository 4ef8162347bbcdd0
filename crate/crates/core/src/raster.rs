//! 8-bit RGB and floating-point grayscale rasters with PNG IO.

use std::io::Cursor;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("degenerate raster {width}x{height}")]
    Degenerate { width: usize, height: usize },
    #[error("pixel buffer has {got} entries, expected {expected}")]
    BufferSize { expected: usize, got: usize },
    #[error("png encode: {0}")]
    Encode(#[from] png::EncodingError),
    #[error("png decode: {0}")]
    Decode(#[from] png::DecodingError),
    #[error("unsupported png layout: {0}")]
    Unsupported(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Rgb = [u8; 3];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<Rgb>,
}

impl RgbImage {
    pub fn filled(width: usize, height: usize, color: Rgb) -> Self {
        Self {
            width,
            height,
            pixels: vec![color; width * height],
        }
    }

    pub fn from_pixels(width: usize, height: usize, pixels: Vec<Rgb>) -> Result<Self, RasterError> {
        if pixels.len() != width * height {
            return Err(RasterError::BufferSize {
                expected: width * height,
                got: pixels.len(),
            });
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn get(&self, x: usize, y: usize) -> Rgb {
        self.pixels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, c: Rgb) {
        self.pixels[y * self.width + x] = c;
    }

    /// Columns `[x0, x1)` as a new image. No resampling.
    pub fn crop_columns(&self, x0: usize, x1: usize) -> RgbImage {
        let w = x1 - x0;
        let mut pixels = Vec::with_capacity(w * self.height);
        for y in 0..self.height {
            pixels.extend_from_slice(&self.pixels[y * self.width + x0..y * self.width + x1]);
        }
        RgbImage {
            width: w,
            height: self.height,
            pixels,
        }
    }

    /// Rec. 601 luma.
    pub fn to_gray(&self) -> GrayImage {
        GrayImage {
            width: self.width,
            height: self.height,
            values: self
                .pixels
                .iter()
                .map(|[r, g, b]| 0.299 * *r as f64 + 0.587 * *g as f64 + 0.114 * *b as f64)
                .collect(),
        }
    }

    pub fn to_png_bytes(&self) -> Result<Vec<u8>, RasterError> {
        if self.width == 0 || self.height == 0 {
            return Err(RasterError::Degenerate {
                width: self.width,
                height: self.height,
            });
        }
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, self.width as u32, self.height as u32);
            enc.set_color(png::ColorType::Rgb);
            enc.set_depth(png::BitDepth::Eight);
            let mut writer = enc.write_header()?;
            writer.write_image_data(self.pixels.as_flattened())?;
        }
        Ok(out)
    }

    pub fn from_png_bytes(bytes: &[u8]) -> Result<Self, RasterError> {
        let mut dec = png::Decoder::new(Cursor::new(bytes));
        dec.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
        let mut reader = dec.read_info()?;
        let size = reader
            .output_buffer_size()
            .ok_or_else(|| RasterError::Unsupported("image too large".into()))?;
        let mut buf = vec![0; size];
        let info = reader.next_frame(&mut buf)?;
        let (w, h) = (info.width as usize, info.height as usize);
        let data = &buf[..info.buffer_size()];
        let pixels = match info.color_type {
            png::ColorType::Rgb => data.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
            png::ColorType::Rgba => data.chunks_exact(4).map(|c| [c[0], c[1], c[2]]).collect(),
            png::ColorType::Grayscale => data.iter().map(|&g| [g, g, g]).collect(),
            png::ColorType::GrayscaleAlpha => data.chunks_exact(2).map(|c| [c[0], c[0], c[0]]).collect(),
            other => return Err(RasterError::Unsupported(format!("{other:?}"))),
        };
        Self::from_pixels(w, h, pixels)
    }

    pub fn save_png(&self, path: &Path) -> Result<(), RasterError> {
        crate::fsutil::write_atomic(path, &self.to_png_bytes()?)?;
        Ok(())
    }

    pub fn load_png(path: &Path) -> Result<Self, RasterError> {
        Self::from_png_bytes(&std::fs::read(path)?)
    }
}

/// Grayscale intensities on the 8-bit scale, stored as `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl GrayImage {
    pub fn filled(width: usize, height: usize, v: f64) -> Self {
        Self {
            width,
            height,
            values: vec![v; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.values[y * self.width + x] = v;
    }
}

/// A binary mask, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitMap {
    pub width: usize,
    pub height: usize,
    pub bits: Vec<bool>,
}

impl BitMap {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.bits[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_roundtrip() {
        let mut img = RgbImage::filled(5, 3, [10, 20, 30]);
        img.set(4, 2, [255, 0, 7]);
        let back = RgbImage::from_png_bytes(&img.to_png_bytes().unwrap()).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn crop_is_column_partition() {
        let img = RgbImage::from_pixels(4, 2, (0..8u8).map(|i| [i, i, i]).collect()).unwrap();
        let l = img.crop_columns(0, 1);
        let r = img.crop_columns(1, 4);
        assert_eq!(l.pixels, vec![[0; 3], [4; 3]]);
        assert_eq!(r.get(0, 1), [5; 3]);
        assert_eq!(l.width + r.width, 4);
    }

    #[test]
    fn luma_of_white_is_255() {
        let g = RgbImage::filled(1, 1, [255, 255, 255]).to_gray();
        assert!((g.values[0] - 255.0).abs() < 1e-9);
    }
}
