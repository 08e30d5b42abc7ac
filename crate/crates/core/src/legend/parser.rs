//! Splitting a cropped legend table into `(symbol, name)` templates.
//!
//! Rows are maximal runs of non-white pixel rows once full-length rulings have
//! been whitened. Text-only rows at the top of the table (headings) are
//! dropped, and each remaining row is split at its column gaps into a symbol
//! region and a name region.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detect::SymbolFinder;
use crate::error::{Error, Result};
use crate::legend::locator::WordBox;
use crate::raster::{binarize, BBox, BinaryRaster, Raster};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Row,
    Column,
}

/// Half-open run `[start, end)` of pixel rows or columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub start: u32,
    pub end: u32,
    pub axis: Axis,
}

impl Span {
    pub fn len(&self) -> u32 {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    LeftToRight,
    RightToLeft,
}

/// Symbol and name regions of one row, in row coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RowSplit {
    pub symbol: BBox,
    pub name: BBox,
    pub direction: Direction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("row has {spans} column span(s); a symbol and a name need at least 2")]
pub struct RowNotSplittable {
    pub spans: usize,
}

/// One template parsed out of the legend table.
#[derive(Debug, Clone, PartialEq)]
pub struct LegendEntry {
    pub class_id: usize,
    /// Ink-tight symbol crop.
    pub symbol: Raster,
    pub name_img: Raster,
    pub name_text: Option<String>,
    pub source_row: Span,
    /// Symbol and name boxes in table coordinates.
    pub symbol_box: BBox,
    pub name_box: BBox,
    pub direction: Direction,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ParserConfig {
    pub threshold: u8,
    /// A pixel row or column is white when its mean intensity reaches this.
    pub white_mean_min: f64,
    /// Full rows/columns with a larger ink fraction are whitened.
    pub stray_fraction: f64,
    /// Row spans thinner than this are ruling remnants.
    pub min_row_height: u32,
}

impl Default for ParserConfig {
    fn default() -> Self {
        ParserConfig {
            threshold: 200,
            white_mean_min: 250.0,
            stray_fraction: 0.9,
            min_row_height: 4,
        }
    }
}

impl ParserConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.stray_fraction > 0.0 && self.stray_fraction < 1.0) {
            return Err(Error::Config("stray_fraction must lie in (0, 1)".into()));
        }
        if !(0.0..=255.0).contains(&self.white_mean_min) {
            return Err(Error::Config("white_mean_min must lie in [0, 255]".into()));
        }
        if self.threshold == 0 || self.threshold == 255 {
            return Err(Error::Config("binarize threshold must lie in (0, 255)".into()));
        }
        Ok(())
    }
}

/// Whitens every full row and column whose ink fraction exceeds
/// `black_fraction`. Both tests read the unmodified input.
pub fn remove_stray_lines(img: &BinaryRaster, black_fraction: f64) -> BinaryRaster {
    let (w, h) = (img.width(), img.height());
    let row_ink = |y: u32| (0..w).filter(|&x| img.is_ink(x, y)).count() as f64 / f64::from(w);
    let col_ink = |x: u32| (0..h).filter(|&y| img.is_ink(x, y)).count() as f64 / f64::from(h);
    let rows: Vec<bool> = (0..h).map(|y| row_ink(y) > black_fraction).collect();
    let cols: Vec<bool> = (0..w).map(|x| col_ink(x) > black_fraction).collect();
    let mut out = img.clone();
    for y in 0..h {
        for x in 0..w {
            if rows[y as usize] || cols[x as usize] {
                out.set_ink(x, y, false);
            }
        }
    }
    out
}

/// Maximal runs of non-white rows or columns, in scan order.
pub fn scan_spans(img: &BinaryRaster, axis: Axis, white_mean_min: f64) -> Vec<Span> {
    let n = match axis {
        Axis::Row => img.height(),
        Axis::Column => img.width(),
    };
    let mut spans = Vec::new();
    let mut open: Option<u32> = None;
    for i in 0..n {
        let mean = match axis {
            Axis::Row => img.row_mean(i),
            Axis::Column => img.column_mean(i),
        };
        let white = mean >= white_mean_min;
        match (open, white) {
            (None, false) => open = Some(i),
            (Some(s), true) => {
                spans.push(Span { start: s, end: i, axis });
                open = None;
            }
            _ => {}
        }
    }
    if let Some(s) = open {
        spans.push(Span { start: s, end: n, axis });
    }
    spans
}

/// Drops the leading rows in which `finder` sees no symbol.
pub fn drop_heading_rows(
    rows: Vec<(Span, BinaryRaster)>,
    finder: &dyn SymbolFinder,
) -> Vec<(Span, BinaryRaster)> {
    let first = rows
        .iter()
        .position(|(_, r)| finder.finds_symbol(r))
        .unwrap_or(rows.len());
    rows.into_iter().skip(first).collect()
}

/// Splits a row into symbol and name regions. The first column span from
/// the left is the symbol unless `finder` rejects it, in which case the row
/// is read right to left and the last span is the symbol.
pub fn split_row(
    row: &BinaryRaster,
    finder: &dyn SymbolFinder,
    white_mean_min: f64,
) -> std::result::Result<RowSplit, RowNotSplittable> {
    let spans = scan_spans(row, Axis::Column, white_mean_min);
    if spans.len() < 2 {
        return Err(RowNotSplittable { spans: spans.len() });
    }
    let h = row.height();
    let column_box = |a: &Span, b: &Span| BBox::new(a.start, 0, b.end - a.start, h);
    let first = &spans[0];
    let first_crop = row
        .crop(column_box(first, first))
        .expect("span lies inside the row");
    let last = spans.len() - 1;
    let (symbol, name, direction) = if finder.finds_symbol(&first_crop) {
        (
            column_box(first, first),
            column_box(&spans[1], &spans[last]),
            Direction::LeftToRight,
        )
    } else {
        (
            column_box(&spans[last], &spans[last]),
            column_box(&spans[0], &spans[last - 1]),
            Direction::RightToLeft,
        )
    };
    Ok(RowSplit {
        symbol,
        name,
        direction,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedTable {
    pub entries: Vec<LegendEntry>,
    /// Rows that could not be split, with the reason.
    pub skipped: Vec<(Span, RowNotSplittable)>,
    /// Number of heading rows removed from the top of the table.
    pub headings_dropped: usize,
    /// The binarized table after stray-line removal.
    pub cleaned: BinaryRaster,
}

/// Parses a cropped legend table into templates with class ids `0..k`.
pub fn parse_table(
    table: &Raster,
    finder: &dyn SymbolFinder,
    cfg: &ParserConfig,
) -> Result<ParsedTable> {
    let bin = binarize(table, cfg.threshold);
    let cleaned = remove_stray_lines(&bin, cfg.stray_fraction);
    let width = cleaned.width();
    let rows: Vec<(Span, BinaryRaster)> = scan_spans(&cleaned, Axis::Row, cfg.white_mean_min)
        .into_iter()
        .filter(|s| s.len() >= cfg.min_row_height)
        .map(|s| {
            let crop = cleaned
                .crop(BBox::new(0, s.start, width, s.len()))
                .expect("span lies inside the table");
            (s, crop)
        })
        .collect();
    let total = rows.len();
    let rows = drop_heading_rows(rows, finder);
    let headings_dropped = total - rows.len();

    let splits: Vec<(Span, std::result::Result<RowSplit, RowNotSplittable>)> = rows
        .par_iter()
        .map(|(span, row)| (*span, split_row(row, finder, cfg.white_mean_min)))
        .collect();

    let mut entries = Vec::new();
    let mut skipped = Vec::new();
    for ((span, row), (_, split)) in rows.iter().zip(splits) {
        match split {
            Ok(split) => {
                let sym_region = row.crop(split.symbol).expect("split box inside row");
                let tight = sym_region
                    .ink_bounds()
                    .map(|b| b.offset(split.symbol.x, 0))
                    .unwrap_or(split.symbol);
                let symbol = row.crop(tight).expect("tight box inside row").to_raster();
                let name_img = row.crop(split.name).expect("split box inside row").to_raster();
                entries.push(LegendEntry {
                    class_id: entries.len(),
                    symbol,
                    name_img,
                    name_text: None,
                    source_row: *span,
                    symbol_box: tight.offset(0, span.start),
                    name_box: split.name.offset(0, span.start),
                    direction: split.direction,
                });
            }
            Err(e) => skipped.push((*span, e)),
        }
    }
    if entries.is_empty() {
        return Err(Error::EmptyTable);
    }
    Ok(ParsedTable {
        entries,
        skipped,
        headings_dropped,
        cleaned,
    })
}

/// Fills `name_text` from words (in table coordinates) whose centers fall in
/// each entry's name box, joined left to right.
pub fn assign_name_text(entries: &mut [LegendEntry], words: &[WordBox]) {
    for e in entries.iter_mut() {
        let mut inside: Vec<&WordBox> = words
            .iter()
            .filter(|w| {
                let cx = w.bbox.x + w.bbox.w / 2;
                let cy = w.bbox.y + w.bbox.h / 2;
                e.name_box.contains_point(cx, cy)
            })
            .collect();
        inside.sort_by_key(|w| (w.bbox.x, w.bbox.y));
        if !inside.is_empty() {
            let text: Vec<&str> = inside.iter().map(|w| w.text.as_str()).collect();
            e.name_text = Some(text.join(" "));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detect::ComponentFinder;
    use crate::font;

    fn stamp(dst: &mut BinaryRaster, src: &BinaryRaster, x0: u32, y0: u32) {
        for y in 0..src.height() {
            for x in 0..src.width() {
                if src.is_ink(x, y) {
                    dst.set_ink(x0 + x, y0 + y, true);
                }
            }
        }
    }

    fn glyph() -> BinaryRaster {
        BinaryRaster::from_fn(16, 16, |x, y| x == 0 || y == 0 || x == 15 || y == 15 || (x < 8 && y < 8))
    }

    #[test]
    fn stray_lines_whitened() {
        let mut img = BinaryRaster::blank(60, 40);
        for x in 0..60 {
            img.set_ink(x, 0, true);
            img.set_ink(x, 39, true);
        }
        for y in 0..40 {
            img.set_ink(0, y, true);
            img.set_ink(59, y, true);
        }
        stamp(&mut img, &glyph(), 10, 10);
        let out = remove_stray_lines(&img, 0.9);
        let mut expected = BinaryRaster::blank(60, 40);
        stamp(&mut expected, &glyph(), 10, 10);
        assert_eq!(out, expected);
        assert_eq!(remove_stray_lines(&expected, 0.9), expected);
        let solid = BinaryRaster::from_fn(7, 5, |_, _| true);
        assert!(remove_stray_lines(&solid, 0.9).is_blank());
    }

    #[test]
    fn spans_over_bands() {
        let bands = [(0u32, 3u32), (6, 10), (15, 20)];
        let img = BinaryRaster::from_fn(12, 22, |x, y| {
            x % 3 == 0 && bands.iter().any(|&(a, b)| (a..b).contains(&y))
        });
        let spans = scan_spans(&img, Axis::Row, 250.0);
        let got: Vec<(u32, u32)> = spans.iter().map(|s| (s.start, s.end)).collect();
        assert_eq!(got, bands.to_vec());
        assert!(scan_spans(&BinaryRaster::blank(5, 5), Axis::Row, 250.0).is_empty());
    }

    #[test]
    fn heading_rule() {
        let to_rows = |v: &[bool]| -> Vec<(Span, BinaryRaster)> {
            v.iter()
                .enumerate()
                .map(|(i, &ink)| {
                    let i = i as u32;
                    let img = BinaryRaster::from_fn(2, 2, |_, _| ink);
                    (Span { start: i, end: i + 1, axis: Axis::Row }, img)
                })
                .collect()
        };
        let finder = |r: &BinaryRaster| !r.is_blank();
        let kept = drop_heading_rows(to_rows(&[false, false, true, false]), &finder);
        let starts: Vec<u32> = kept.iter().map(|(s, _)| s.start).collect();
        assert_eq!(starts, vec![2, 3]);
        assert_eq!(drop_heading_rows(to_rows(&[true, false]), &finder).len(), 2);
        assert!(drop_heading_rows(to_rows(&[false, false]), &finder).is_empty());
    }

    fn row_with(text: &str, glyph_left: bool) -> (BinaryRaster, BBox) {
        let text_img = font::render_text(text).unwrap();
        let g = glyph();
        let w = g.width() + text_img.width() + 16;
        let mut row = BinaryRaster::blank(w, 16);
        let (gx, tx) = if glyph_left {
            (2, 2 + g.width() + 8)
        } else {
            (4 + text_img.width() + 8, 4)
        };
        stamp(&mut row, &g, gx, 0);
        stamp(&mut row, &text_img, tx, 4);
        (row, BBox::new(gx, 0, g.width(), 16))
    }

    #[test]
    fn split_left_to_right() {
        let (row, sym) = row_with("EXIT SIGN", true);
        let split = split_row(&row, &ComponentFinder::default(), 250.0).unwrap();
        assert_eq!(split.direction, Direction::LeftToRight);
        assert_eq!(split.symbol, sym);
        assert_eq!(split.name.x, sym.right() + 8);
        assert!(split.symbol.intersection(&split.name).is_none());
    }

    #[test]
    fn split_right_to_left() {
        let (row, sym) = row_with("EMERGENCY LIGHT", false);
        let split = split_row(&row, &ComponentFinder::default(), 250.0).unwrap();
        assert_eq!(split.direction, Direction::RightToLeft);
        assert_eq!(split.symbol, sym);
        assert_eq!(split.name.x, 4);
        assert!(split.name.right() <= split.symbol.x);
    }

    #[test]
    fn single_span_row_is_degenerate() {
        let row = glyph();
        assert_eq!(
            split_row(&row, &ComponentFinder::default(), 250.0),
            Err(RowNotSplittable { spans: 1 })
        );
    }

    #[test]
    fn blank_table_is_empty() {
        let table = Raster::filled(120, 80, 255);
        assert!(matches!(
            parse_table(&table, &ComponentFinder::default(), &ParserConfig::default()),
            Err(Error::EmptyTable)
        ));
    }

    #[test]
    fn names_attach_by_box() {
        let (row, _) = row_with("EXIT", true);
        let mut table = row.to_raster();
        table = Raster::from_fn(table.width(), 30, |x, y| {
            if (5..21).contains(&y) {
                table.get(x, y - 5)
            } else {
                255
            }
        });
        let mut parsed =
            parse_table(&table, &ComponentFinder::default(), &ParserConfig::default()).unwrap();
        let words = vec![WordBox {
            text: "EXIT".into(),
            bbox: BBox::new(26, 9, 23, 7),
            confidence: 1.0,
        }];
        assign_name_text(&mut parsed.entries, &words);
        assert_eq!(parsed.entries[0].name_text.as_deref(), Some("EXIT"));
    }
}
