use std::path::Path;

use super::{BBox, Raster};
use crate::error::Result;
use crate::font;

/// Interleaved 8-bit RGB image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbRaster {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<u8>,
}

impl RgbRaster {
    pub fn from_gray(img: &Raster) -> Self {
        RgbRaster {
            width: img.width(),
            height: img.height(),
            pixels: img.pixels().iter().flat_map(|&p| [p, p, p]).collect(),
        }
    }

    pub fn get(&self, x: u32, y: u32) -> [u8; 3] {
        let i = 3 * (y as usize * self.width as usize + x as usize);
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    fn put(&mut self, x: i64, y: i64, c: [u8; 3]) {
        if x < 0 || y < 0 || x >= i64::from(self.width) || y >= i64::from(self.height) {
            return;
        }
        let i = 3 * (y as usize * self.width as usize + x as usize);
        self.pixels[i..i + 3].copy_from_slice(&c);
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let img = image::RgbImage::from_raw(self.width, self.height, self.pixels.clone())
            .expect("buffer length matches dimensions");
        img.save_with_format(path, image::ImageFormat::Png)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OverlayBox {
    pub bbox: BBox,
    pub label: String,
    pub color_class: usize,
}

const PALETTE: [[u8; 3]; 8] = [
    [230, 25, 75],
    [60, 180, 75],
    [0, 130, 200],
    [245, 130, 48],
    [145, 30, 180],
    [70, 200, 200],
    [240, 50, 230],
    [128, 128, 0],
];

/// Color copy of `img` with 1-px box outlines and labels burned in. Boxes
/// reaching past the image are clipped.
pub fn render_overlay(img: &Raster, boxes: &[OverlayBox]) -> RgbRaster {
    let mut out = RgbRaster::from_gray(img);
    for b in boxes {
        let color = PALETTE[b.color_class % PALETTE.len()];
        let (x0, y0) = (i64::from(b.bbox.x), i64::from(b.bbox.y));
        let (x1, y1) = (x0 + i64::from(b.bbox.w) - 1, y0 + i64::from(b.bbox.h) - 1);
        for x in x0..=x1 {
            out.put(x, y0, color);
            out.put(x, y1, color);
        }
        for y in y0..=y1 {
            out.put(x0, y, color);
            out.put(x1, y, color);
        }
        if !b.label.is_empty() {
            let ty = if y0 >= i64::from(font::GLYPH_HEIGHT) + 1 {
                y0 - i64::from(font::GLYPH_HEIGHT) - 1
            } else {
                y1 + 2
            };
            for (px, py) in font::ink_pixels(&b.label) {
                out.put(x0 + i64::from(px), ty + i64::from(py), color);
            }
        }
    }
    out
}
