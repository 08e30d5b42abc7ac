//! Grayscale and binary rasters plus the pixel-level primitives the rest of
//! the pipeline is built on.
//!
//! Coordinates are `(x, y)` with the origin at the top-left corner. Ink is
//! `0`, background is `255`.

mod components;
mod contour;
mod morphology;
mod overlay;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use components::{connected_components, Component};
pub use contour::{find_rectangles, trace_borders, Border, BorderKind, RectangleConfig};
pub use morphology::{
    combine_lines, detect_lines, dilate, erode, open, subtract_ink, LineKernel, Orientation,
};
pub use overlay::{render_overlay, OverlayBox, RgbRaster};

pub const INK: u8 = 0;
pub const PAPER: u8 = 255;

/// Axis-aligned pixel rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BBox {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl BBox {
    pub const fn new(x: u32, y: u32, w: u32, h: u32) -> Self {
        BBox { x, y, w, h }
    }

    /// Box spanning the inclusive corner coordinates.
    pub fn from_corners(x0: u32, y0: u32, x1: u32, y1: u32) -> Self {
        BBox::new(x0, y0, x1 - x0 + 1, y1 - y0 + 1)
    }

    pub fn area(&self) -> u64 {
        u64::from(self.w) * u64::from(self.h)
    }

    /// Exclusive right edge.
    pub fn right(&self) -> u32 {
        self.x + self.w
    }

    /// Exclusive bottom edge.
    pub fn bottom(&self) -> u32 {
        self.y + self.h
    }

    pub fn contains(&self, other: &BBox) -> bool {
        other.x >= self.x
            && other.y >= self.y
            && other.right() <= self.right()
            && other.bottom() <= self.bottom()
    }

    pub fn contains_point(&self, x: u32, y: u32) -> bool {
        x >= self.x && y >= self.y && x < self.right() && y < self.bottom()
    }

    pub fn intersection(&self, other: &BBox) -> Option<BBox> {
        let x0 = self.x.max(other.x);
        let y0 = self.y.max(other.y);
        let x1 = self.right().min(other.right());
        let y1 = self.bottom().min(other.bottom());
        (x1 > x0 && y1 > y0).then(|| BBox::new(x0, y0, x1 - x0, y1 - y0))
    }

    pub fn intersects(&self, other: &BBox) -> bool {
        self.intersection(other).is_some()
    }

    pub fn union(&self, other: &BBox) -> BBox {
        let x0 = self.x.min(other.x);
        let y0 = self.y.min(other.y);
        let x1 = self.right().max(other.right());
        let y1 = self.bottom().max(other.bottom());
        BBox::new(x0, y0, x1 - x0, y1 - y0)
    }

    /// Chebyshev gap between two boxes; 0 when they touch or overlap.
    pub fn gap(&self, other: &BBox) -> u32 {
        let dx = if other.x >= self.right() {
            other.x - self.right()
        } else if self.x >= other.right() {
            self.x - other.right()
        } else {
            0
        };
        let dy = if other.y >= self.bottom() {
            other.y - self.bottom()
        } else if self.y >= other.bottom() {
            self.y - other.bottom()
        } else {
            0
        };
        dx.max(dy)
    }

    /// Shift by `(dx, dy)`, used to map a box from a crop back into its parent.
    pub fn offset(&self, dx: u32, dy: u32) -> BBox {
        BBox::new(self.x + dx, self.y + dy, self.w, self.h)
    }

    pub fn fits_within(&self, width: u32, height: u32) -> bool {
        self.w > 0 && self.h > 0 && self.right() <= width && self.bottom() <= height
    }
}

/// Intersection over union; 0 for disjoint boxes.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    match a.intersection(b) {
        None => 0.0,
        Some(i) => {
            let inter = i.area() as f64;
            inter / (a.area() as f64 + b.area() as f64 - inter)
        }
    }
}

/// Row-major 8-bit grayscale image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Raster {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl Raster {
    pub fn new(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidDimensions(width, height));
        }
        let expected = width as usize * height as usize;
        if pixels.len() != expected {
            return Err(Error::PixelCount {
                expected,
                got: pixels.len(),
            });
        }
        Ok(Raster {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: u32, height: u32, value: u8) -> Self {
        assert!(width > 0 && height > 0, "raster dimensions must be positive");
        Raster {
            width,
            height,
            pixels: vec![value; width as usize * height as usize],
        }
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> u8) -> Self {
        let mut r = Raster::filled(width, height, PAPER);
        for y in 0..height {
            for x in 0..width {
                r.set(x, y, f(x, y));
            }
        }
        r
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn bounds(&self) -> BBox {
        BBox::new(0, 0, self.width, self.height)
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.pixels[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, v: u8) {
        self.pixels[y as usize * self.width as usize + x as usize] = v;
    }

    pub fn load_png(path: impl AsRef<Path>) -> Result<Self> {
        let img = image::open(path)?.into_luma8();
        let (w, h) = img.dimensions();
        Raster::new(w, h, img.into_raw())
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let img = image::GrayImage::from_raw(self.width, self.height, self.pixels.clone())
            .expect("buffer length matches dimensions");
        img.save_with_format(path, image::ImageFormat::Png)?;
        Ok(())
    }

    /// Encode as PNG bytes.
    pub fn to_png_bytes(&self) -> Result<Vec<u8>> {
        let img = image::GrayImage::from_raw(self.width, self.height, self.pixels.clone())
            .expect("buffer length matches dimensions");
        let mut out = std::io::Cursor::new(Vec::new());
        img.write_to(&mut out, image::ImageFormat::Png)?;
        Ok(out.into_inner())
    }

    pub fn invert(&self) -> Raster {
        Raster {
            width: self.width,
            height: self.height,
            pixels: self.pixels.iter().map(|p| 255 - p).collect(),
        }
    }
}

/// Raster whose pixels are exclusively [`INK`] or [`PAPER`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryRaster {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl BinaryRaster {
    pub fn blank(width: u32, height: u32) -> Self {
        assert!(width > 0 && height > 0, "raster dimensions must be positive");
        BinaryRaster {
            width,
            height,
            pixels: vec![PAPER; width as usize * height as usize],
        }
    }

    pub fn from_fn(width: u32, height: u32, mut ink: impl FnMut(u32, u32) -> bool) -> Self {
        let mut r = BinaryRaster::blank(width, height);
        for y in 0..height {
            for x in 0..width {
                if ink(x, y) {
                    r.set_ink(x, y, true);
                }
            }
        }
        r
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn bounds(&self) -> BBox {
        BBox::new(0, 0, self.width, self.height)
    }

    #[inline]
    pub fn is_ink(&self, x: u32, y: u32) -> bool {
        self.pixels[y as usize * self.width as usize + x as usize] == INK
    }

    #[inline]
    pub fn set_ink(&mut self, x: u32, y: u32, ink: bool) {
        self.pixels[y as usize * self.width as usize + x as usize] = if ink { INK } else { PAPER };
    }

    pub fn ink_count(&self) -> usize {
        self.pixels.iter().filter(|&&p| p == INK).count()
    }

    pub fn is_blank(&self) -> bool {
        self.pixels.iter().all(|&p| p == PAPER)
    }

    pub fn inverted(&self) -> BinaryRaster {
        BinaryRaster {
            width: self.width,
            height: self.height,
            pixels: self.pixels.iter().map(|&p| 255 - p).collect(),
        }
    }

    /// View as a plain grayscale raster.
    pub fn to_raster(&self) -> Raster {
        Raster {
            width: self.width,
            height: self.height,
            pixels: self.pixels.clone(),
        }
    }

    pub fn crop(&self, b: BBox) -> Result<BinaryRaster> {
        let pixels = crop_buffer(&self.pixels, self.width, self.height, b)?;
        Ok(BinaryRaster {
            width: b.w,
            height: b.h,
            pixels,
        })
    }

    /// Tight bounding box of all ink, if any.
    pub fn ink_bounds(&self) -> Option<BBox> {
        let (mut x0, mut y0, mut x1, mut y1) = (u32::MAX, u32::MAX, 0, 0);
        for y in 0..self.height {
            for x in 0..self.width {
                if self.is_ink(x, y) {
                    x0 = x0.min(x);
                    y0 = y0.min(y);
                    x1 = x1.max(x);
                    y1 = y1.max(y);
                }
            }
        }
        (x0 != u32::MAX).then(|| BBox::from_corners(x0, y0, x1, y1))
    }

    /// Mean intensity of row `y` over the `[x0, x1)` range.
    pub(crate) fn row_mean(&self, y: u32) -> f64 {
        let start = y as usize * self.width as usize;
        let row = &self.pixels[start..start + self.width as usize];
        row.iter().map(|&p| f64::from(p)).sum::<f64>() / f64::from(self.width)
    }

    pub(crate) fn column_mean(&self, x: u32) -> f64 {
        let w = self.width as usize;
        let sum: f64 = (0..self.height as usize)
            .map(|y| f64::from(self.pixels[y * w + x as usize]))
            .sum();
        sum / f64::from(self.height)
    }
}

/// Threshold into ink (`pixel < threshold`) and background.
pub fn binarize(img: &Raster, threshold: u8) -> BinaryRaster {
    BinaryRaster {
        width: img.width,
        height: img.height,
        pixels: img
            .pixels
            .iter()
            .map(|&p| if p < threshold { INK } else { PAPER })
            .collect(),
    }
}

/// Binarize, inverting light-on-dark inputs so that ink is always the minority.
pub fn binarize_document(img: &Raster, threshold: u8) -> BinaryRaster {
    let bin = binarize(img, threshold);
    if bin.ink_count() * 2 > bin.pixels.len() {
        bin.inverted()
    } else {
        bin
    }
}

/// Returns the raster flipped to dark-on-light if more than half of it binarizes to ink.
pub fn normalize_polarity(img: &Raster, threshold: u8) -> Raster {
    let ink = img.pixels.iter().filter(|&&p| p < threshold).count();
    if ink * 2 > img.pixels.len() {
        img.invert()
    } else {
        img.clone()
    }
}

fn crop_buffer(pixels: &[u8], width: u32, height: u32, b: BBox) -> Result<Vec<u8>> {
    if !b.fits_within(width, height) {
        return Err(Error::OutOfBounds {
            bbox: b,
            width,
            height,
        });
    }
    let w = width as usize;
    let mut out = Vec::with_capacity(b.area() as usize);
    for y in b.y..b.bottom() {
        let start = y as usize * w + b.x as usize;
        out.extend_from_slice(&pixels[start..start + b.w as usize]);
    }
    Ok(out)
}

pub fn crop(img: &Raster, b: BBox) -> Result<Raster> {
    let pixels = crop_buffer(&img.pixels, img.width, img.height, b)?;
    Ok(Raster {
        width: b.w,
        height: b.h,
        pixels,
    })
}

/// Bilinear resampling with pixel-center alignment and edge clamping.
pub fn resize(img: &Raster, out_w: u32, out_h: u32) -> Result<Raster> {
    if out_w == 0 || out_h == 0 {
        return Err(Error::InvalidDimensions(out_w, out_h));
    }
    let sample = resample_axis(img.width, out_w);
    let sample_y = resample_axis(img.height, out_h);
    let w = img.width as usize;
    let mut pixels = Vec::with_capacity(out_w as usize * out_h as usize);
    for &(y0, y1, fy) in &sample_y {
        for &(x0, x1, fx) in &sample {
            let p = |x: usize, y: usize| f32::from(img.pixels[y * w + x]);
            let top = p(x0, y0) * (1.0 - fx) + p(x1, y0) * fx;
            let bottom = p(x0, y1) * (1.0 - fx) + p(x1, y1) * fx;
            let v = top * (1.0 - fy) + bottom * fy;
            pixels.push(v.round().clamp(0.0, 255.0) as u8);
        }
    }
    Raster::new(out_w, out_h, pixels)
}

/// For each output index, the two source taps and the weight of the second.
fn resample_axis(src: u32, dst: u32) -> Vec<(usize, usize, f32)> {
    let scale = src as f64 / dst as f64;
    let last = src as usize - 1;
    (0..dst)
        .map(|i| {
            let pos = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, last as f64);
            let i0 = pos.floor() as usize;
            let i1 = (i0 + 1).min(last);
            (i0, i1, (pos - i0 as f64) as f32)
        })
        .collect()
}

/// Rotate a raster by quarter turns clockwise.
pub fn rotate_quarter(img: &Raster, quarter_turns: u32) -> Raster {
    let mut out = img.clone();
    for _ in 0..quarter_turns % 4 {
        let (w, h) = (out.width, out.height);
        // 90 degrees clockwise: (x, y) -> (h - 1 - y, x)
        let mut next = Raster::filled(h, w, PAPER);
        for y in 0..h {
            for x in 0..w {
                next.set(h - 1 - y, x, out.get(x, y));
            }
        }
        out = next;
    }
    out
}

/// Horizontal and vertical morphology kernels sized from the image dimensions.
///
/// Each length is `floor(dim / divisor)` clamped to at least 2, since a
/// length-1 kernel leaves every image unchanged.
pub fn make_line_kernels(width: u32, height: u32, divisor: u32) -> (LineKernel, LineKernel) {
    let divisor = divisor.max(1);
    let h_len = (width / divisor).max(2);
    let v_len = (height / divisor).max(2);
    (LineKernel::horizontal(h_len), LineKernel::vertical(v_len))
}
