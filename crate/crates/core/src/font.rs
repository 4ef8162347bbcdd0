//! Built-in 5x7 bitmap font for `A-Z`, `0-9` and space, with a renderer and
//! a template-matching reader that inverts it.
//!
//! Glyph cells are 6 px wide (5 px glyph plus 1 px gap) and 7 px tall. Ink
//! is pure black; anything else is treated as background.

use crate::raster::{BitMap, Rgb, RgbImage};

pub const GLYPH_W: usize = 5;
pub const GLYPH_H: usize = 7;
pub const CELL_W: usize = GLYPH_W + 1;
pub const INK: Rgb = [0, 0, 0];

const GLYPHS: [(char, [&str; 7]); 36] = [
    ('A', ["01110", "10001", "10001", "11111", "10001", "10001", "10001"]),
    ('B', ["11110", "10001", "10001", "11110", "10001", "10001", "11110"]),
    ('C', ["01110", "10001", "10000", "10000", "10000", "10001", "01110"]),
    ('D', ["11100", "10010", "10001", "10001", "10001", "10010", "11100"]),
    ('E', ["11111", "10000", "10000", "11110", "10000", "10000", "11111"]),
    ('F', ["11111", "10000", "10000", "11110", "10000", "10000", "10000"]),
    ('G', ["01110", "10001", "10000", "10111", "10001", "10001", "01111"]),
    ('H', ["10001", "10001", "10001", "11111", "10001", "10001", "10001"]),
    ('I', ["01110", "00100", "00100", "00100", "00100", "00100", "01110"]),
    ('J', ["00111", "00010", "00010", "00010", "00010", "10010", "01100"]),
    ('K', ["10001", "10010", "10100", "11000", "10100", "10010", "10001"]),
    ('L', ["10000", "10000", "10000", "10000", "10000", "10000", "11111"]),
    ('M', ["10001", "11011", "10101", "10101", "10001", "10001", "10001"]),
    ('N', ["10001", "10001", "11001", "10101", "10011", "10001", "10001"]),
    ('O', ["01110", "10001", "10001", "10001", "10001", "10001", "01110"]),
    ('P', ["11110", "10001", "10001", "11110", "10000", "10000", "10000"]),
    ('Q', ["01110", "10001", "10001", "10001", "10101", "10010", "01101"]),
    ('R', ["11110", "10001", "10001", "11110", "10100", "10010", "10001"]),
    ('S', ["01111", "10000", "10000", "01110", "00001", "00001", "11110"]),
    ('T', ["11111", "00100", "00100", "00100", "00100", "00100", "00100"]),
    ('U', ["10001", "10001", "10001", "10001", "10001", "10001", "01110"]),
    ('V', ["10001", "10001", "10001", "10001", "10001", "01010", "00100"]),
    ('W', ["10001", "10001", "10001", "10101", "10101", "10101", "01010"]),
    ('X', ["10001", "10001", "01010", "00100", "01010", "10001", "10001"]),
    ('Y', ["10001", "10001", "01010", "00100", "00100", "00100", "00100"]),
    ('Z', ["11111", "00001", "00010", "00100", "01000", "10000", "11111"]),
    ('0', ["01110", "10001", "10011", "10101", "11001", "10001", "01110"]),
    ('1', ["00100", "01100", "00100", "00100", "00100", "00100", "01110"]),
    ('2', ["01110", "10001", "00001", "00010", "00100", "01000", "11111"]),
    ('3', ["11111", "00010", "00100", "00010", "00001", "10001", "01110"]),
    ('4', ["00010", "00110", "01010", "10010", "11111", "00010", "00010"]),
    ('5', ["11111", "10000", "11110", "00001", "00001", "10001", "01110"]),
    ('6', ["00110", "01000", "10000", "11110", "10001", "10001", "01110"]),
    ('7', ["11111", "00001", "00010", "00100", "01000", "01000", "01000"]),
    ('8', ["01110", "10001", "10001", "01110", "10001", "10001", "01110"]),
    ('9', ["01110", "10001", "10001", "01111", "00001", "00010", "01100"]),
];

/// Every renderable non-space character, in table order.
pub fn alphabet() -> impl Iterator<Item = char> {
    GLYPHS.iter().map(|(c, _)| *c)
}

pub fn is_supported(c: char) -> bool {
    c == ' ' || glyph(c).is_some()
}

/// Row-major 5x7 bitmap of `c`; `None` for unsupported characters.
pub fn glyph(c: char) -> Option<[[bool; GLYPH_W]; GLYPH_H]> {
    let (_, rows) = GLYPHS.iter().find(|(g, _)| *g == c)?;
    let mut out = [[false; GLYPH_W]; GLYPH_H];
    for (y, row) in rows.iter().enumerate() {
        for (x, b) in row.bytes().enumerate() {
            out[y][x] = b == b'1';
        }
    }
    Some(out)
}

/// Width in pixels of `text` rendered at scale 1 (trailing gap excluded).
pub fn text_width(text: &str) -> usize {
    (text.chars().count() * CELL_W).saturating_sub(1)
}

/// Draws `text` with its top-left cell corner at `(x0, y0)`; pixels falling
/// outside the image are clipped. Unsupported characters render as blanks.
pub fn render_text(img: &mut RgbImage, text: &str, x0: isize, y0: isize, color: Rgb) {
    for (i, c) in text.chars().enumerate() {
        let Some(g) = glyph(c) else { continue };
        for (gy, row) in g.iter().enumerate() {
            for (gx, on) in row.iter().enumerate() {
                let x = x0 + (i * CELL_W + gx) as isize;
                let y = y0 + gy as isize;
                if *on && x >= 0 && y >= 0 && (x as usize) < img.width && (y as usize) < img.height {
                    img.set(x as usize, y as usize, color);
                }
            }
        }
    }
}

/// Top-left corner that centres `text` inside the `[x, x+w) x [y, y+h)` box.
pub fn centred_origin(text: &str, x: usize, y: usize, w: usize, h: usize) -> (isize, isize) {
    let tw = text_width(text) as isize;
    (
        x as isize + (w as isize - tw) / 2,
        y as isize + (h as isize - GLYPH_H as isize) / 2,
    )
}

pub fn ink_mask(img: &RgbImage) -> BitMap {
    BitMap {
        width: img.width,
        height: img.height,
        bits: img.pixels.iter().map(|p| *p == INK).collect(),
    }
}

/// Inclusive bounding box `(x0, y0, x1, y1)` of the set bits.
pub fn bounding_box(mask: &BitMap) -> Option<(usize, usize, usize, usize)> {
    let mut bb: Option<(usize, usize, usize, usize)> = None;
    for y in 0..mask.height {
        for x in 0..mask.width {
            if mask.get(x, y) {
                bb = Some(match bb {
                    None => (x, y, x, y),
                    Some((a, b, c, d)) => (a.min(x), b.min(y), c.max(x), d.max(y)),
                });
            }
        }
    }
    bb
}

fn ink_at(mask: &BitMap, x: isize, y: isize) -> bool {
    x >= 0 && y >= 0 && (x as usize) < mask.width && (y as usize) < mask.height && mask.get(x as usize, y as usize)
}

/// Best-matching character for the cell whose top-left is `(cx, cy)`, with
/// its pixel mismatch count. The gap column must be blank.
fn match_cell(mask: &BitMap, cx: isize, cy: isize, templates: &[(char, [[bool; 5]; 7])]) -> (char, usize) {
    let mut best = (' ', usize::MAX);
    for (c, g) in templates {
        let mut cost = 0;
        for gy in 0..GLYPH_H {
            for gx in 0..CELL_W {
                let want = gx < GLYPH_W && g[gy][gx];
                if ink_at(mask, cx + gx as isize, cy + gy as isize) != want {
                    cost += 1;
                }
            }
        }
        if cost < best.1 {
            best = (*c, cost);
        }
    }
    best
}

/// Reads a single line of text rendered with this font. Searches every cell
/// phase relative to the ink bounding box and keeps the decoding that
/// explains the ink with the fewest mismatched pixels. Blank images read as
/// the empty string.
pub fn read_text(img: &RgbImage) -> String {
    let mask = ink_mask(img);
    let Some((x0, y0, x1, y1)) = bounding_box(&mask) else {
        return String::new();
    };
    let mut templates = vec![(' ', [[false; GLYPH_W]; GLYPH_H])];
    templates.extend(alphabet().map(|c| (c, glyph(c).unwrap())));
    let mut best: Option<(usize, String)> = None;
    for py in 0..GLYPH_H.min(y1 - y0 + 1) {
        for px in 0..CELL_W {
            let left = x0 as isize - px as isize;
            let top = y0 as isize - py as isize;
            let span = x1 as isize - left + 1;
            let cells = (span as usize).div_ceil(CELL_W);
            let mut cost = 0;
            let mut text = String::with_capacity(cells);
            for i in 0..cells {
                let (c, m) = match_cell(&mask, left + (i * CELL_W) as isize, top, &templates);
                cost += m;
                text.push(c);
            }
            // Ink in rows the cells do not cover is unexplained.
            for y in y0..=y1 {
                let yi = y as isize;
                if yi < top || yi >= top + GLYPH_H as isize {
                    cost += (x0..=x1).filter(|&x| mask.get(x, y)).count();
                }
            }
            if best.as_ref().is_none_or(|(c, _)| cost < *c) {
                best = Some((cost, text));
            }
        }
    }
    best.map(|(_, t)| t.trim().to_string()).unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn glyphs_are_distinct_and_well_formed() {
        let all: Vec<_> = alphabet().map(|c| glyph(c).unwrap()).collect();
        for (i, a) in all.iter().enumerate() {
            assert!(a.iter().flatten().any(|b| *b));
            for b in &all[i + 1..] {
                assert_ne!(a, b);
            }
        }
        assert_eq!(all.len(), 36);
        for (_, rows) in GLYPHS {
            assert!(rows.iter().all(|r| r.len() == 5));
        }
    }

    #[test]
    fn bold_roundtrip() {
        let mut img = RgbImage::filled(40, 12, [200, 180, 120]);
        let (x, y) = centred_origin("BOLD", 0, 0, 40, 12);
        render_text(&mut img, "BOLD", x, y, INK);
        assert_eq!(read_text(&img), "BOLD");
    }

    #[test]
    fn blank_reads_empty() {
        assert_eq!(read_text(&RgbImage::filled(10, 10, [128; 3])), "");
    }

    #[test]
    fn leading_blank_column_glyph() {
        let mut img = RgbImage::filled(30, 10, [150; 3]);
        render_text(&mut img, "1J7", 3, 1, INK);
        assert_eq!(read_text(&img), "1J7");
    }

    proptest! {
        #[test]
        fn render_read_adjoint(
            word in "[A-Z0-9]{1,8}( [A-Z0-9]{1,6})?",
            dx in 0usize..12,
            dy in 0usize..8,
        ) {
            let w = text_width(&word) + 24;
            let mut img = RgbImage::filled(w, 18, [210, 190, 140]);
            render_text(&mut img, &word, dx as isize, dy as isize, INK);
            prop_assert_eq!(read_text(&img), word);
        }
    }
}
