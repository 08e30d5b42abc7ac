//! Finding the table of legends: either the classical anchor-word method
//! over ruled rectangles, or boxes supplied by an external detector.

use serde::{Deserialize, Serialize};

use crate::detect::LineSettings;
use crate::raster::{binarize_document, find_rectangles, BBox, Raster, RectangleConfig};
use crate::sidecar::{DetectionKind, DetectionSidecar};

/// A recognized word and where it sits in the drawing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordBox {
    pub text: String,
    pub bbox: BBox,
    pub confidence: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TableMethod {
    ClassicalAnchor,
    External,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TableDetection {
    pub bbox: BBox,
    pub method: TableMethod,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LocatorConfig {
    /// Words that title a legend table, tried in order.
    pub anchors: Vec<String>,
    /// Require the whole normalized word to equal the anchor instead of
    /// accepting it as a prefix ("LEGENDS", "LEGEND:").
    pub exact_anchor: bool,
    pub rectangles: RectangleConfig,
}

impl Default for LocatorConfig {
    fn default() -> Self {
        LocatorConfig {
            anchors: vec!["LEGEND".to_owned()],
            exact_anchor: false,
            rectangles: RectangleConfig::default(),
        }
    }
}

/// Upper-cased text with everything but letters and digits removed.
pub fn normalize_word(text: &str) -> String {
    text.chars()
        .filter(|c| c.is_alphanumeric())
        .flat_map(char::to_uppercase)
        .collect()
}

/// The most confident word matching `anchor` after normalization.
pub fn locate_anchor_word<'a>(
    words: &'a [WordBox],
    anchor: &str,
    exact: bool,
) -> Option<&'a WordBox> {
    let anchor = normalize_word(anchor);
    if anchor.is_empty() {
        return None;
    }
    words
        .iter()
        .filter(|w| {
            let norm = normalize_word(&w.text);
            if exact {
                norm == anchor
            } else {
                norm.starts_with(&anchor)
            }
        })
        // max_by keeps the last maximum; reverse so the earliest word wins ties.
        .rev()
        .max_by(|a, b| a.confidence.total_cmp(&b.confidence))
}

fn smallest_containing<'a>(rects: &'a [BBox], inner: &BBox, strict: bool) -> Option<&'a BBox> {
    rects
        .iter()
        .filter(|r| r.contains(inner) && (!strict || *r != inner))
        .min_by_key(|r| (r.area(), r.y, r.x))
}

/// The parent of the smallest rectangle holding `anchor`, or that rectangle
/// itself when nothing encloses it.
pub fn enclosing_table(rects: &[BBox], anchor: &BBox) -> Option<BBox> {
    let cell = smallest_containing(rects, anchor, false)?;
    Some(*smallest_containing(rects, cell, true).unwrap_or(cell))
}

/// Ruled-rectangle candidates of a drawing.
pub fn table_rectangles(img: &Raster, cfg: &LocatorConfig, lines: &LineSettings) -> Vec<BBox> {
    let bin = binarize_document(img, lines.threshold);
    find_rectangles(&lines.line_image(&bin), &cfg.rectangles)
}

/// binarize, detect and combine rulings, find rectangles, then take the
/// parent rectangle around the anchor word.
pub fn extract_table_classical(
    img: &Raster,
    words: &[WordBox],
    cfg: &LocatorConfig,
    lines: &LineSettings,
) -> Option<TableDetection> {
    let anchor = cfg
        .anchors
        .iter()
        .find_map(|a| locate_anchor_word(words, a, cfg.exact_anchor))?;
    let rects = table_rectangles(img, cfg, lines);
    enclosing_table(&rects, &anchor.bbox).map(|bbox| TableDetection {
        bbox,
        method: TableMethod::ClassicalAnchor,
        confidence: 1.0,
    })
}

/// Table boxes for `image_id` from a sidecar, clipped to the image.
pub fn ingest_table_detections(
    doc: &DetectionSidecar,
    image_id: &str,
    width: u32,
    height: u32,
) -> Vec<TableDetection> {
    doc.detections_for(image_id, DetectionKind::Table)
        .filter_map(|d| {
            d.clamped_box(width, height).map(|bbox| TableDetection {
                bbox,
                method: TableMethod::External,
                confidence: d.confidence,
            })
        })
        .collect()
}

/// Highest confidence, then larger area, then smaller `(y, x)`.
pub fn select_table(candidates: &[TableDetection]) -> Option<TableDetection> {
    candidates.iter().copied().min_by(|a, b| {
        b.confidence
            .total_cmp(&a.confidence)
            .then(b.bbox.area().cmp(&a.bbox.area()))
            .then((a.bbox.y, a.bbox.x, a.bbox.w, a.bbox.h).cmp(&(b.bbox.y, b.bbox.x, b.bbox.w, b.bbox.h)))
            .then(a.method_rank().cmp(&b.method_rank()))
    })
}

impl TableDetection {
    fn method_rank(&self) -> u8 {
        match self.method {
            TableMethod::ClassicalAnchor => 0,
            TableMethod::External => 1,
        }
    }
}
