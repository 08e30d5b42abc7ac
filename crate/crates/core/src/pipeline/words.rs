//! Exact-template word finder for text rendered in the built-in bitmap font.
//! It stands in for OCR on synthetic drawings and recognizes nothing else.

use crate::font;
use crate::legend::locator::WordBox;
use crate::raster::{binarize_document, BBox, BinaryRaster, Raster};

pub const DEFAULT_AGREEMENT: f64 = 0.98;

/// Pixel agreement of `tpl` at `(x0, y0)`, or `None` once more than `budget`
/// pixels disagree. Ink pixels are checked first since they fail fastest.
fn agreement(
    img: &BinaryRaster,
    tpl_ink: &[(u32, u32)],
    tpl_paper: &[(u32, u32)],
    x0: u32,
    y0: u32,
    budget: usize,
) -> Option<usize> {
    let mut misses = 0;
    for &(x, y) in tpl_ink {
        if !img.is_ink(x0 + x, y0 + y) {
            misses += 1;
            if misses > budget {
                return None;
            }
        }
    }
    for &(x, y) in tpl_paper {
        if img.is_ink(x0 + x, y0 + y) {
            misses += 1;
            if misses > budget {
                return None;
            }
        }
    }
    Some(misses)
}

/// Slides each vocabulary word over the binarized image at stride 1 and
/// reports placements agreeing on at least `min_agreement` of the word's
/// pixels. Overlapping hits of one word keep the best (earliest on ties).
pub fn locate_words_builtin(
    img: &Raster,
    vocabulary: &[String],
    threshold: u8,
    min_agreement: f64,
) -> Vec<WordBox> {
    let bin = binarize_document(img, threshold);
    let mut out = Vec::new();
    for word in vocabulary {
        let Some(tpl) = font::render_text(word) else {
            continue;
        };
        let (tw, th) = (tpl.width(), tpl.height());
        if tw == 0 || tw > bin.width() || th > bin.height() {
            continue;
        }
        let mut ink = Vec::new();
        let mut paper = Vec::new();
        for y in 0..th {
            for x in 0..tw {
                if tpl.is_ink(x, y) {
                    ink.push((x, y));
                } else {
                    paper.push((x, y));
                }
            }
        }
        if ink.is_empty() {
            continue;
        }
        let total = (tw * th) as usize;
        let budget = ((1.0 - min_agreement) * total as f64).floor() as usize;
        let mut hits: Vec<(BBox, f64)> = Vec::new();
        for y in 0..=bin.height() - th {
            for x in 0..=bin.width() - tw {
                if let Some(misses) = agreement(&bin, &ink, &paper, x, y, budget) {
                    let score = 1.0 - misses as f64 / total as f64;
                    if score >= min_agreement {
                        hits.push((BBox::new(x, y, tw, th), score));
                    }
                }
            }
        }
        // Raster order is already the tie order; a stable sort keeps it.
        hits.sort_by(|a, b| b.1.total_cmp(&a.1));
        let mut kept: Vec<(BBox, f64)> = Vec::new();
        for (b, s) in hits {
            if kept.iter().all(|(k, _)| !k.intersects(&b)) {
                kept.push((b, s));
            }
        }
        kept.sort_by_key(|(b, _)| (b.y, b.x));
        out.extend(kept.into_iter().map(|(bbox, confidence)| WordBox {
            text: word.clone(),
            bbox,
            confidence,
        }));
    }
    out
}
