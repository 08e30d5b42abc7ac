//! Seeded synthetic drawings with a legend table, scattered symbol
//! instances, distractor rulings and arrows, and speck noise.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::font;
use crate::matching::Label;
use crate::pipeline::eval::{Annotation, GroundTruth, GroundTruthImage};
use crate::pipeline::glyphs::{glyph_library, Glyph};
use crate::raster::{rotate_quarter, BBox, BinaryRaster, Raster};

const PAD_X: u32 = 6;
const PAD_Y: u32 = 5;
const COLUMN_GAP: u32 = 10;
/// Minimum white gap between placed items.
const CLEARANCE: u32 = 6;
const MARGIN: u32 = 10;
const MAX_TRIES: usize = 20_000;

pub const HEADINGS: [&str; 2] = ["LEGEND", "SYMBOL DESCRIPTION"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FixtureParams {
    pub width: u32,
    pub height: u32,
    /// Number of legend classes.
    pub classes: usize,
    pub instances_per_class: usize,
    /// Instances of library glyphs that are not in the legend.
    pub outliers: usize,
    /// Allowed clockwise quarter turns for instances.
    pub rotations: Vec<u32>,
    pub scales: Vec<f64>,
    /// Number of one- or two-pixel ink specks.
    pub noise_specks: usize,
    pub distractor_lines: usize,
    pub arrows: usize,
    /// Heading rows above the entries; the first reads "LEGEND".
    pub heading_rows: usize,
    /// Put the symbol column to the right of the names.
    pub symbol_right: bool,
}

impl Default for FixtureParams {
    fn default() -> Self {
        FixtureParams {
            width: 2000,
            height: 1600,
            classes: 5,
            instances_per_class: 6,
            outliers: 0,
            rotations: vec![0, 1, 2, 3],
            scales: vec![1.0],
            noise_specks: 200,
            distractor_lines: 12,
            arrows: 6,
            heading_rows: 1,
            symbol_right: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyEntry {
    pub class_id: usize,
    pub glyph_index: usize,
    pub name: String,
    pub symbol_box: BBox,
    pub name_box: BBox,
}

/// Where the generator put the legend table and its rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LegendKey {
    pub table_box: BBox,
    /// Box of the "LEGEND" heading word, when there is one.
    pub anchor_box: Option<BBox>,
    pub heading_rows: usize,
    pub symbol_right: bool,
    pub entries: Vec<KeyEntry>,
}

impl LegendKey {
    fn offset(mut self, dx: u32, dy: u32) -> Self {
        self.table_box = self.table_box.offset(dx, dy);
        self.anchor_box = self.anchor_box.map(|b| b.offset(dx, dy));
        for e in &mut self.entries {
            e.symbol_box = e.symbol_box.offset(dx, dy);
            e.name_box = e.name_box.offset(dx, dy);
        }
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fixture {
    pub image_id: String,
    pub drawing: Raster,
    pub ground_truth: GroundTruthImage,
    pub key: LegendKey,
    /// Template bitmaps by class id.
    pub templates: Vec<BinaryRaster>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableFixture {
    pub table: Raster,
    pub key: LegendKey,
    pub templates: Vec<BinaryRaster>,
}

fn stamp(dst: &mut BinaryRaster, src: &BinaryRaster, x0: u32, y0: u32) {
    for y in 0..src.height() {
        for x in 0..src.width() {
            if src.is_ink(x, y) {
                dst.set_ink(x0 + x, y0 + y, true);
            }
        }
    }
}

fn stamp_text(dst: &mut BinaryRaster, text: &str, x0: u32, y0: u32) -> BBox {
    for (x, y) in font::ink_pixels(text) {
        dst.set_ink(x0 + x, y0 + y, true);
    }
    BBox::new(x0, y0, font::text_width(text), font::GLYPH_HEIGHT)
}

fn fill(dst: &mut BinaryRaster, b: BBox) {
    for y in b.y..b.bottom() {
        for x in b.x..b.right() {
            dst.set_ink(x, y, true);
        }
    }
}

/// Renders a bordered table with one ruled row per heading and entry.
fn render_table(
    entries: &[(&Glyph, usize)],
    heading_rows: usize,
    symbol_right: bool,
) -> (BinaryRaster, LegendKey) {
    let headings: Vec<&str> = HEADINGS[..heading_rows].to_vec();
    let headings: Vec<String> = headings
        .iter()
        .map(|h| {
            if symbol_right && *h == HEADINGS[1] {
                "DESCRIPTION SYMBOL".to_owned()
            } else {
                (*h).to_owned()
            }
        })
        .collect();
    let sym_w = entries.iter().map(|(g, _)| g.bitmap.width()).max().unwrap_or(0);
    let text_w = entries
        .iter()
        .map(|(g, _)| font::text_width(g.name))
        .max()
        .unwrap_or(0);
    let heading_w = headings.iter().map(|h| font::text_width(h)).max().unwrap_or(0);
    let inner_w = (sym_w + COLUMN_GAP + text_w).max(heading_w);
    let width = inner_w + 2 * PAD_X + 2;
    // Keeps sparse glyph rows from reading as white lines.
    debug_assert!((width as usize) < 51 * super::glyphs::MIN_LINE_INK);
    let row_heights: Vec<u32> = headings
        .iter()
        .map(|_| font::GLYPH_HEIGHT)
        .chain(entries.iter().map(|(g, _)| g.bitmap.height().max(font::GLYPH_HEIGHT)))
        .collect();
    let height = 1 + row_heights.iter().map(|h| h + 2 * PAD_Y + 1).sum::<u32>();

    let mut img = BinaryRaster::blank(width, height);
    fill(&mut img, BBox::new(0, 0, 1, height));
    fill(&mut img, BBox::new(width - 1, 0, 1, height));
    fill(&mut img, BBox::new(0, 0, width, 1));
    let (sym_x, text_x) = if symbol_right {
        (1 + PAD_X + text_w + COLUMN_GAP, 1 + PAD_X)
    } else {
        (1 + PAD_X, 1 + PAD_X + sym_w + COLUMN_GAP)
    };
    let mut y = 1;
    let mut anchor_box = None;
    for (i, h) in headings.iter().enumerate() {
        let b = stamp_text(&mut img, h, 1 + PAD_X, y + PAD_Y);
        if i == 0 {
            anchor_box = Some(b);
        }
        y += font::GLYPH_HEIGHT + 2 * PAD_Y;
        fill(&mut img, BBox::new(0, y, width, 1));
        y += 1;
    }
    let mut key_entries = Vec::new();
    for (class_id, ((g, glyph_index), rh)) in entries
        .iter()
        .zip(&row_heights[headings.len()..])
        .enumerate()
    {
        let top = y + PAD_Y;
        let gy = top + (rh - g.bitmap.height()) / 2;
        stamp(&mut img, &g.bitmap, sym_x, gy);
        let name_box = stamp_text(&mut img, g.name, text_x, top + (rh - font::GLYPH_HEIGHT) / 2);
        key_entries.push(KeyEntry {
            class_id,
            glyph_index: *glyph_index,
            name: g.name.to_owned(),
            symbol_box: BBox::new(sym_x, gy, g.bitmap.width(), g.bitmap.height()),
            name_box,
        });
        y += rh + 2 * PAD_Y;
        fill(&mut img, BBox::new(0, y, width, 1));
        y += 1;
    }
    debug_assert_eq!(y, height);
    let key = LegendKey {
        table_box: BBox::new(0, 0, width, height),
        anchor_box,
        heading_rows,
        symbol_right,
        entries: key_entries,
    };
    (img, key)
}

fn pick_glyphs(rng: &mut ChaCha8Rng, lib: &[Glyph], classes: usize, extra: usize) -> Result<Vec<usize>> {
    if classes == 0 || classes + extra.min(1) > lib.len() {
        return Err(Error::GlyphLibrary {
            requested: classes + extra.min(1),
            available: lib.len(),
        });
    }
    let mut order: Vec<usize> = (0..lib.len()).collect();
    order.shuffle(rng);
    Ok(order)
}

/// A standalone legend table image with its answer key.
pub fn generate_table_fixture(
    classes: usize,
    heading_rows: usize,
    symbol_right: bool,
    seed: u64,
) -> Result<TableFixture> {
    if heading_rows > HEADINGS.len() {
        return Err(Error::Config(format!(
            "at most {} heading rows are supported",
            HEADINGS.len()
        )));
    }
    let lib = glyph_library();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let order = pick_glyphs(&mut rng, &lib, classes, 0)?;
    let chosen: Vec<(&Glyph, usize)> = order[..classes].iter().map(|&i| (&lib[i], i)).collect();
    let (img, key) = render_table(&chosen, heading_rows, symbol_right);
    Ok(TableFixture {
        table: img.to_raster(),
        templates: chosen.iter().map(|(g, _)| g.bitmap.clone()).collect(),
        key,
    })
}

/// Bilinear ink coverage sampled at output pixel centers, thresholded at one
/// half. Edges stay smooth instead of growing nearest-neighbor stair steps.
fn scale_bitmap(b: &BinaryRaster, s: f64) -> BinaryRaster {
    if (s - 1.0).abs() < 1e-9 {
        return b.clone();
    }
    let w = ((f64::from(b.width()) * s).round() as u32).max(1);
    let h = ((f64::from(b.height()) * s).round() as u32).max(1);
    let ink = |x: i64, y: i64| -> f64 {
        let x = x.clamp(0, i64::from(b.width()) - 1) as u32;
        let y = y.clamp(0, i64::from(b.height()) - 1) as u32;
        if b.is_ink(x, y) {
            1.0
        } else {
            0.0
        }
    };
    BinaryRaster::from_fn(w, h, |x, y| {
        let sx = (f64::from(x) + 0.5) / s - 0.5;
        let sy = (f64::from(y) + 0.5) / s - 0.5;
        let (x0, y0) = (sx.floor(), sy.floor());
        let (fx, fy) = (sx - x0, sy - y0);
        let (x0, y0) = (x0 as i64, y0 as i64);
        let top = ink(x0, y0) * (1.0 - fx) + ink(x0 + 1, y0) * fx;
        let bottom = ink(x0, y0 + 1) * (1.0 - fx) + ink(x0 + 1, y0 + 1) * fx;
        top * (1.0 - fy) + bottom * fy >= 0.5
    })
}

fn rotate_bitmap(b: &BinaryRaster, turns: u32) -> BinaryRaster {
    let r = rotate_quarter(&b.to_raster(), turns);
    BinaryRaster::from_fn(r.width(), r.height(), |x, y| r.get(x, y) == 0)
}

struct Canvas {
    width: u32,
    height: u32,
    /// Boxes that later items keep their distance from.
    reserved: Vec<BBox>,
}

impl Canvas {
    fn is_free(&self, b: &BBox) -> bool {
        b.x >= MARGIN
            && b.y >= MARGIN
            && b.right() + MARGIN <= self.width
            && b.bottom() + MARGIN <= self.height
            && self
                .reserved
                .iter()
                .all(|r| !r.intersects(b) && r.gap(b) >= CLEARANCE)
    }

    fn place(&mut self, rng: &mut ChaCha8Rng, w: u32, h: u32, what: &str) -> Result<BBox> {
        if w + 2 * MARGIN < self.width && h + 2 * MARGIN < self.height {
            for _ in 0..MAX_TRIES {
                let x = rng.gen_range(MARGIN..self.width - MARGIN - w);
                let y = rng.gen_range(MARGIN..self.height - MARGIN - h);
                let b = BBox::new(x, y, w, h);
                if self.is_free(&b) {
                    return Ok(b);
                }
            }
        }
        Err(Error::Config(format!("no room left on the canvas for {what}")))
    }
}

fn arrow(img: &mut BinaryRaster, shaft: BBox, turns: u32) {
    fill(img, shaft);
    // Filled head at the far end of the shaft, 7 px wide and 5 px deep.
    let horizontal = shaft.w > shaft.h;
    for d in 0..5u32 {
        let half = 3 - (d * 3) / 4;
        let (cx, cy) = match (horizontal, turns % 2) {
            (true, 0) => (shaft.right() + d, shaft.y + shaft.h / 2),
            (true, _) => (shaft.x - 1 - d, shaft.y + shaft.h / 2),
            (false, 0) => (shaft.x + shaft.w / 2, shaft.bottom() + d),
            (false, _) => (shaft.x + shaft.w / 2, shaft.y - 1 - d),
        };
        for o in 0..=2 * half {
            if horizontal {
                img.set_ink(cx, cy + o - half, true);
            } else {
                img.set_ink(cx + o - half, cy, true);
            }
        }
    }
}

/// Renders one synthetic drawing. The same parameters and seed always give
/// the same drawing, ground truth and key.
pub fn generate_fixture(params: &FixtureParams, seed: u64) -> Result<Fixture> {
    if params.heading_rows == 0 || params.heading_rows > HEADINGS.len() {
        return Err(Error::Config(
            "drawings need one or two heading rows so the table carries its title".into(),
        ));
    }
    if params.rotations.is_empty() || params.scales.iter().any(|s| !(*s > 0.0)) || params.scales.is_empty() {
        return Err(Error::Config("rotations and scales must be non-empty and positive".into()));
    }
    let lib = glyph_library();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let order = pick_glyphs(&mut rng, &lib, params.classes, params.outliers)?;
    let chosen: Vec<(&Glyph, usize)> =
        order[..params.classes].iter().map(|&i| (&lib[i], i)).collect();
    let outlier_pool: Vec<usize> = order[params.classes..].to_vec();

    let (table, key) = render_table(&chosen, params.heading_rows, params.symbol_right);
    let (tw, th) = (table.width(), table.height());
    if tw + 4 * MARGIN > params.width || th + 4 * MARGIN > params.height {
        return Err(Error::Config("canvas is too small for the legend table".into()));
    }
    let mut canvas = Canvas {
        width: params.width,
        height: params.height,
        reserved: Vec::new(),
    };
    let (tx, ty) = (
        params.width - tw - 4 * MARGIN,
        params.height - th - 4 * MARGIN,
    );
    let key = key.offset(tx, ty);
    let mut img = BinaryRaster::blank(params.width, params.height);
    stamp(&mut img, &table, tx, ty);
    canvas.reserved.push(key.table_box);

    // Rulings may cross each other but keep clear of the table and symbols.
    let mut line_boxes = Vec::new();
    for _ in 0..params.distractor_lines {
        let len = rng.gen_range(80..=600u32).min(params.width.min(params.height) - 4 * MARGIN);
        let thick = rng.gen_range(1..=2u32);
        let (w, h) = if rng.gen_bool(0.5) { (len, thick) } else { (thick, len) };
        let b = canvas.place(&mut rng, w, h, "a distractor line")?;
        fill(&mut img, b);
        line_boxes.push(b);
    }
    for _ in 0..params.arrows {
        let len = rng.gen_range(40..=120u32);
        let turns = rng.gen_range(0..4u32);
        let (w, h) = if turns < 2 { (len, 1) } else { (1, len) };
        // Room for the head on either end.
        let (bw, bh) = if turns < 2 { (w + 10, 7) } else { (7, h + 10) };
        let b = canvas.place(&mut rng, bw, bh, "an arrow")?;
        let shaft = if turns < 2 {
            BBox::new(b.x + 5, b.y + 3, w, 1)
        } else {
            BBox::new(b.x + 3, b.y + 5, 1, h)
        };
        arrow(&mut img, shaft, turns);
        line_boxes.push(b);
    }
    canvas.reserved.extend(&line_boxes);

    let mut annotations = Vec::new();
    let mut instances: Vec<(BinaryRaster, Label)> = Vec::new();
    for (class_id, (g, _)) in chosen.iter().enumerate() {
        for _ in 0..params.instances_per_class {
            instances.push((g.bitmap.clone(), Label::Class(class_id)));
        }
    }
    for i in 0..params.outliers {
        let g = &lib[outlier_pool[i % outlier_pool.len()]];
        instances.push((g.bitmap.clone(), Label::Outlier));
    }
    for (bitmap, label) in instances {
        let turns = *params.rotations.choose(&mut rng).expect("non-empty");
        let scale = *params.scales.choose(&mut rng).expect("non-empty");
        let glyph = rotate_bitmap(&scale_bitmap(&bitmap, scale), turns);
        let b = canvas.place(&mut rng, glyph.width(), glyph.height(), "a symbol instance")?;
        stamp(&mut img, &glyph, b.x, b.y);
        canvas.reserved.push(b);
        annotations.push(Annotation {
            x: b.x,
            y: b.y,
            w: b.w,
            h: b.h,
            label,
        });
    }

    for _ in 0..params.noise_specks {
        let (w, h) = if rng.gen_bool(0.5) { (1, 1) } else { (2, 1) };
        let b = canvas.place(&mut rng, w, h, "a speck")?;
        fill(&mut img, b);
    }

    Ok(Fixture {
        image_id: format!("fixture-{seed}"),
        drawing: img.to_raster(),
        ground_truth: GroundTruthImage {
            id: format!("fixture-{seed}"),
            annotations,
        },
        templates: chosen.iter().map(|(g, _)| g.bitmap.clone()).collect(),
        key,
    })
}

impl Fixture {
    /// Writes `<id>.png`, `<id>.gt.json` and `<id>.key.json` into `dir`.
    pub fn write_to(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        self.drawing.save_png(dir.join(format!("{}.png", self.image_id)))?;
        let gt = GroundTruth {
            images: vec![self.ground_truth.clone()],
        };
        std::fs::write(
            dir.join(format!("{}.gt.json", self.image_id)),
            serde_json::to_string_pretty(&gt)?,
        )?;
        std::fs::write(
            dir.join(format!("{}.key.json", self.image_id)),
            serde_json::to_string_pretty(&self.key)?,
        )?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seven_five_by_six() {
        let params = FixtureParams::default();
        let f = generate_fixture(&params, 7).unwrap();
        assert_eq!(f.ground_truth.annotations.len(), 30);
        assert_eq!(f.key.entries.len(), 5);
        let again = generate_fixture(&params, 7).unwrap();
        assert_eq!(f, again);
        assert_eq!(
            f.drawing.to_png_bytes().unwrap(),
            again.drawing.to_png_bytes().unwrap()
        );
    }

    #[test]
    fn noiseless_crops_equal_templates() {
        let params = FixtureParams {
            noise_specks: 0,
            rotations: vec![0],
            ..FixtureParams::default()
        };
        let f = generate_fixture(&params, 3).unwrap();
        let bin = BinaryRaster::from_fn(f.drawing.width(), f.drawing.height(), |x, y| {
            f.drawing.get(x, y) == 0
        });
        for a in &f.ground_truth.annotations {
            let Label::Class(c) = a.label else { panic!() };
            let crop = bin.crop(BBox::new(a.x, a.y, a.w, a.h)).unwrap();
            assert_eq!(crop, f.templates[c]);
        }
        for e in &f.key.entries {
            let crop = bin.crop(e.symbol_box).unwrap();
            assert_eq!(crop, f.templates[e.class_id]);
        }
    }

    #[test]
    fn too_many_classes() {
        let params = FixtureParams {
            classes: 99,
            ..FixtureParams::default()
        };
        assert!(matches!(
            generate_fixture(&params, 1),
            Err(Error::GlyphLibrary { .. })
        ));
    }

    #[test]
    fn table_fixture_layout() {
        let t = generate_table_fixture(4, 2, true, 11).unwrap();
        assert_eq!(t.key.entries.len(), 4);
        assert_eq!(t.key.table_box, t.table.bounds());
        for e in &t.key.entries {
            assert!(e.name_box.right() < e.symbol_box.x);
        }
    }
}
