//! Side-by-side comparison panels with bitmap-font captions.

use noise2sr::Image;

const GLYPH_W: usize = 5;
const GLYPH_H: usize = 7;
const SCALE: usize = 2;
const GAP: usize = 8;
const CAPTION_H: usize = 2 * (GLYPH_H * SCALE + 4) + 4;

/// 5x7 glyph rows, most significant of the low five bits on the left.
fn glyph(c: char) -> [u8; GLYPH_H] {
    match c.to_ascii_uppercase() {
        '0' => [0x0e, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0e],
        '1' => [0x04, 0x0c, 0x04, 0x04, 0x04, 0x04, 0x0e],
        '2' => [0x0e, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1f],
        '3' => [0x1f, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0e],
        '4' => [0x02, 0x06, 0x0a, 0x12, 0x1f, 0x02, 0x02],
        '5' => [0x1f, 0x10, 0x1e, 0x01, 0x01, 0x11, 0x0e],
        '6' => [0x06, 0x08, 0x10, 0x1e, 0x11, 0x11, 0x0e],
        '7' => [0x1f, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08],
        '8' => [0x0e, 0x11, 0x11, 0x0e, 0x11, 0x11, 0x0e],
        '9' => [0x0e, 0x11, 0x11, 0x0f, 0x01, 0x02, 0x0c],
        'A' => [0x0e, 0x11, 0x11, 0x1f, 0x11, 0x11, 0x11],
        'B' => [0x1e, 0x11, 0x11, 0x1e, 0x11, 0x11, 0x1e],
        'C' => [0x0e, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0e],
        'D' => [0x1c, 0x12, 0x11, 0x11, 0x11, 0x12, 0x1c],
        'E' => [0x1f, 0x10, 0x10, 0x1e, 0x10, 0x10, 0x1f],
        'F' => [0x1f, 0x10, 0x10, 0x1e, 0x10, 0x10, 0x10],
        'I' => [0x0e, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0e],
        'M' => [0x11, 0x1b, 0x15, 0x15, 0x11, 0x11, 0x11],
        'N' => [0x11, 0x11, 0x19, 0x15, 0x13, 0x11, 0x11],
        'O' => [0x0e, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0e],
        'P' => [0x1e, 0x11, 0x11, 0x1e, 0x10, 0x10, 0x10],
        'R' => [0x1e, 0x11, 0x11, 0x1e, 0x14, 0x12, 0x11],
        'S' => [0x0f, 0x10, 0x10, 0x0e, 0x01, 0x01, 0x1e],
        'Y' => [0x11, 0x11, 0x0a, 0x04, 0x04, 0x04, 0x04],
        '.' => [0x00, 0x00, 0x00, 0x00, 0x00, 0x0c, 0x0c],
        ':' => [0x00, 0x0c, 0x0c, 0x00, 0x0c, 0x0c, 0x00],
        '-' => [0x00, 0x00, 0x00, 0x1f, 0x00, 0x00, 0x00],
        '/' => [0x00, 0x01, 0x02, 0x04, 0x08, 0x10, 0x00],
        ' ' => [0x00; GLYPH_H],
        _ => [0x1f, 0x11, 0x11, 0x11, 0x11, 0x11, 0x1f],
    }
}

/// Draws `text` into `canvas` (row-major, `width` wide) at `(top, left)`.
fn draw_text(canvas: &mut [f64], width: usize, top: usize, left: usize, text: &str, value: f64) {
    let advance = (GLYPH_W + 1) * SCALE;
    for (i, ch) in text.chars().enumerate() {
        let rows = glyph(ch);
        for (gy, bits) in rows.iter().enumerate() {
            for gx in 0..GLYPH_W {
                if bits & (0x10 >> gx) == 0 {
                    continue;
                }
                for dy in 0..SCALE {
                    for dx in 0..SCALE {
                        let (r, c) = (top + gy * SCALE + dy, left + i * advance + gx * SCALE + dx);
                        if c < width && r * width + c < canvas.len() {
                            canvas[r * width + c] = value;
                        }
                    }
                }
            }
        }
    }
}

/// One tile of the panel: an image and up to two caption lines.
pub struct Tile<'a> {
    pub image: &'a Image,
    pub lines: Vec<String>,
}

/// Lays tiles out left to right on a black canvas, captions above each.
/// Tiles of different heights are top-aligned.
pub fn render_panel(tiles: &[Tile]) -> Image {
    let caption_w = tiles
        .iter()
        .flat_map(|t| t.lines.iter().map(|l| l.chars().count() * (GLYPH_W + 1) * SCALE))
        .max()
        .unwrap_or(0);
    let col_w: Vec<usize> = tiles.iter().map(|t| t.image.width().max(caption_w)).collect();
    let width = col_w.iter().sum::<usize>() + GAP * (tiles.len() + 1);
    let height = CAPTION_H + tiles.iter().map(|t| t.image.height()).max().unwrap_or(0) + GAP;
    let mut canvas = vec![0.0; width * height];
    let mut left = GAP;
    for (tile, w) in tiles.iter().zip(&col_w) {
        for (k, line) in tile.lines.iter().take(2).enumerate() {
            draw_text(&mut canvas, width, 4 + k * (GLYPH_H * SCALE + 4), left, line, 1.0);
        }
        let img = tile.image;
        for r in 0..img.height() {
            let dst = (CAPTION_H + r) * width + left;
            for c in 0..img.width() {
                canvas[dst + c] = img.get(r, c).clamp(0.0, 1.0);
            }
        }
        left += w + GAP;
    }
    Image::new(height, width, canvas).expect("finite canvas")
}
