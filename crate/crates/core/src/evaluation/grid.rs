//! Tiled comparison figures with a bitmap-font caption strip.

use std::path::Path;

use image::{Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::image::Image;

const GLYPH_W: usize = 5;
const GLYPH_H: usize = 7;
const SCALE: usize = 2;
const ADVANCE: usize = (GLYPH_W + 1) * SCALE;
/// Height of the caption strip above the tiles.
pub const CAPTION_HEIGHT: usize = GLYPH_H * SCALE + 10;

const BACKGROUND: Rgb<u8> = Rgb([255, 255, 255]);
const INK: Rgb<u8> = Rgb([20, 20, 20]);

// 5x7 glyphs, one byte per row, low five bits used
fn glyph(c: char) -> [u8; 7] {
    match c.to_ascii_uppercase() {
        'A' => [0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11],
        'B' => [0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E],
        'C' => [0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E],
        'D' => [0x1E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x1E],
        'E' => [0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F],
        'F' => [0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10],
        'G' => [0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0F],
        'H' => [0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11],
        'I' => [0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E],
        'J' => [0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C],
        'K' => [0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11],
        'L' => [0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F],
        'M' => [0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11],
        'N' => [0x11, 0x11, 0x19, 0x15, 0x13, 0x11, 0x11],
        'O' => [0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E],
        'P' => [0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10],
        'Q' => [0x0E, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0D],
        'R' => [0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11],
        'S' => [0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E],
        'T' => [0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04],
        'U' => [0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E],
        'V' => [0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04],
        'W' => [0x11, 0x11, 0x11, 0x15, 0x15, 0x15, 0x0A],
        'X' => [0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11],
        'Y' => [0x11, 0x11, 0x11, 0x0A, 0x04, 0x04, 0x04],
        'Z' => [0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F],
        '0' => [0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E],
        '1' => [0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E],
        '2' => [0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F],
        '3' => [0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E],
        '4' => [0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02],
        '5' => [0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E],
        '6' => [0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E],
        '7' => [0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08],
        '8' => [0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E],
        '9' => [0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C],
        '-' => [0x00, 0x00, 0x00, 0x1F, 0x00, 0x00, 0x00],
        '+' => [0x00, 0x04, 0x04, 0x1F, 0x04, 0x04, 0x00],
        '.' => [0x00, 0x00, 0x00, 0x00, 0x00, 0x0C, 0x0C],
        '_' => [0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x1F],
        ':' => [0x00, 0x0C, 0x0C, 0x00, 0x0C, 0x0C, 0x00],
        '/' => [0x01, 0x01, 0x02, 0x04, 0x08, 0x10, 0x10],
        '(' => [0x02, 0x04, 0x08, 0x08, 0x08, 0x04, 0x02],
        ')' => [0x08, 0x04, 0x02, 0x02, 0x02, 0x04, 0x08],
        ' ' => [0; 7],
        _ => [0x0E, 0x11, 0x01, 0x02, 0x04, 0x00, 0x04],
    }
}

fn draw_text(canvas: &mut RgbImage, text: &str, x0: usize, y0: usize, max_w: usize) {
    let fit = (max_w / ADVANCE).max(1);
    let chars: Vec<char> = text.chars().take(fit).collect();
    let width = chars.len() * ADVANCE;
    let x0 = x0 + max_w.saturating_sub(width) / 2;
    for (i, ch) in chars.into_iter().enumerate() {
        let rows = glyph(ch);
        for (gy, bits) in rows.iter().enumerate() {
            for gx in 0..GLYPH_W {
                if bits >> (GLYPH_W - 1 - gx) & 1 == 0 {
                    continue;
                }
                for sy in 0..SCALE {
                    for sx in 0..SCALE {
                        let x = x0 + i * ADVANCE + gx * SCALE + sx;
                        let y = y0 + gy * SCALE + sy;
                        if x < canvas.width() as usize && y < canvas.height() as usize {
                            canvas.put_pixel(x as u32, y as u32, INK);
                        }
                    }
                }
            }
        }
    }
}

/// Tiles `rows` (each a list of same-size images) under a strip with one caption
/// per column. Returns the canvas.
pub fn render_grid(rows: &[Vec<Image>], captions: &[String]) -> Result<RgbImage> {
    let first = rows
        .first()
        .and_then(|r| r.first())
        .ok_or_else(|| Error::EmptyInput("grid has no images".into()))?;
    let (h, w) = first.dims();
    let cols = rows[0].len();
    for r in rows {
        if r.len() != cols {
            return Err(Error::shape(format!("{cols} columns"), r.len()));
        }
        for img in r {
            if img.dims() != (h, w) {
                return Err(Error::shape(
                    format!("{h}x{w}"),
                    format!("{}x{}", img.height(), img.width()),
                ));
            }
        }
    }
    if !captions.is_empty() && captions.len() != cols {
        return Err(Error::shape(format!("{cols} captions"), captions.len()));
    }
    let mut canvas = RgbImage::from_pixel((cols * w) as u32, (CAPTION_HEIGHT + rows.len() * h) as u32, BACKGROUND);
    for (c, text) in captions.iter().enumerate() {
        draw_text(&mut canvas, text, c * w, (CAPTION_HEIGHT - GLYPH_H * SCALE) / 2, w);
    }
    for (r, row) in rows.iter().enumerate() {
        for (c, img) in row.iter().enumerate() {
            let tile = img.to_rgb8();
            image::imageops::replace(&mut canvas, &tile, (c * w) as i64, (CAPTION_HEIGHT + r * h) as i64);
        }
    }
    Ok(canvas)
}

/// Renders the grid and writes it as PNG.
pub fn make_grid(rows: &[Vec<Image>], captions: &[String], path: &Path) -> Result<(u32, u32)> {
    let canvas = render_grid(rows, captions)?;
    canvas
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::Decode {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
    Ok(canvas.dimensions())
}
