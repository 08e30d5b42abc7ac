//! Candidate symbol localization.
//!
//! The classical detector removes long ruling and wiring with line openings,
//! groups what remains into connected components, merges nearby components
//! and filters the merged boxes by size and shape. External detections are
//! ingested from a detection sidecar instead.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{
    self, binarize_document, combine_lines, connected_components, detect_lines, iou,
    make_line_kernels, subtract_ink, BBox, BinaryRaster, Raster,
};
use crate::sidecar::{DetectionKind, DetectionSidecar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectionSource {
    Classical,
    External,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BBox,
    pub confidence: f64,
    pub source: DetectionSource,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    /// Minimum merged-box area in px².
    pub min_area: u64,
    /// Maximum merged-box area as a fraction of the searched image.
    pub max_area_fraction: f64,
    /// Components whose boxes are at most this many pixels apart are merged.
    pub merge_gap: u32,
    /// Maximum ratio of the longer to the shorter box side.
    pub aspect_max: f64,
    pub nms_iou: f64,
    /// Components with at most this many ink pixels are treated as noise
    /// and dropped before merging.
    pub speck_area: u64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            min_area: 25,
            max_area_fraction: 0.05,
            merge_gap: 3,
            aspect_max: 8.0,
            nms_iou: 0.5,
            speck_area: 2,
        }
    }
}

impl DetectorConfig {
    /// Settings for telling glyphs from text inside legend rows: letters of
    /// a word stay separate and fall under the area floor.
    pub fn legend_rows() -> Self {
        DetectorConfig {
            min_area: 100,
            max_area_fraction: 1.0,
            merge_gap: 0,
            ..DetectorConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.min_area < 1 {
            return Err(Error::Config("detector min_area must be at least 1".into()));
        }
        if !(self.max_area_fraction > 0.0 && self.max_area_fraction <= 1.0) {
            return Err(Error::Config(
                "detector max_area_fraction must lie in (0, 1]".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.nms_iou) {
            return Err(Error::Config("detector nms_iou must lie in [0, 1)".into()));
        }
        if !(self.aspect_max >= 1.0) {
            return Err(Error::Config("detector aspect_max must be at least 1".into()));
        }
        Ok(())
    }
}

/// Binarization and line-kernel settings shared by the line-based stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct LineSettings {
    pub threshold: u8,
    pub kernel_divisor: u32,
    pub iterations: u32,
}

impl Default for LineSettings {
    fn default() -> Self {
        LineSettings {
            threshold: 200,
            kernel_divisor: 70,
            iterations: 1,
        }
    }
}

impl LineSettings {
    pub fn validate(&self) -> Result<()> {
        if self.threshold == 0 || self.threshold == 255 {
            return Err(Error::Config("binarize threshold must lie in (0, 255)".into()));
        }
        if self.kernel_divisor == 0 || self.iterations == 0 {
            return Err(Error::Config(
                "kernel divisor and line iterations must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Horizontal and vertical rulings of `bin`, combined into one image.
    pub fn line_image(&self, bin: &BinaryRaster) -> BinaryRaster {
        let (hk, vk) = make_line_kernels(bin.width(), bin.height(), self.kernel_divisor);
        let (h, v) = detect_lines(bin, hk, vk, self.iterations);
        combine_lines(&h, &v).expect("openings preserve dimensions")
    }
}

/// Groups components transitively until no two groups lie within `gap`.
/// The result does not depend on the input order.
pub fn merge_boxes(boxes: &[BBox], gap: u32) -> Vec<BBox> {
    let mut current: Vec<BBox> = boxes.to_vec();
    loop {
        let n = current.len();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(parent: &mut [usize], mut i: usize) -> usize {
            while parent[i] != i {
                parent[i] = parent[parent[i]];
                i = parent[i];
            }
            i
        }
        let mut merged_any = false;
        for i in 0..n {
            for j in i + 1..n {
                if current[i].gap(&current[j]) <= gap {
                    let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                    if a != b {
                        parent[a.max(b)] = a.min(b);
                        merged_any = true;
                    }
                }
            }
        }
        let mut groups: Vec<Option<BBox>> = vec![None; n];
        for i in 0..n {
            let root = find(&mut parent, i);
            groups[root] = Some(match groups[root] {
                None => current[i],
                Some(b) => b.union(&current[i]),
            });
        }
        current = groups.into_iter().flatten().collect();
        if !merged_any {
            break;
        }
    }
    current.sort_by_key(|b| (b.y, b.x, b.w, b.h));
    current
}

fn ink_in(img: &BinaryRaster, b: &BBox) -> u64 {
    let mut n = 0;
    for y in b.y..b.bottom() {
        for x in b.x..b.right() {
            n += u64::from(img.is_ink(x, y));
        }
    }
    n
}

/// Merged and filtered component boxes of already line-free ink.
pub fn candidate_boxes(ink: &BinaryRaster, cfg: &DetectorConfig) -> Vec<BBox> {
    let comps: Vec<BBox> = connected_components(ink)
        .into_iter()
        .filter(|c| c.area > cfg.speck_area)
        .map(|c| c.bbox)
        .collect();
    let image_area = ink.bounds().area() as f64;
    merge_boxes(&comps, cfg.merge_gap)
        .into_iter()
        .filter(|b| {
            let aspect = f64::from(b.w.max(b.h)) / f64::from(b.w.min(b.h));
            b.area() >= cfg.min_area
                && b.area() as f64 <= cfg.max_area_fraction * image_area
                && aspect <= cfg.aspect_max
        })
        .collect()
}

/// Binarized drawing with its rulings removed.
pub fn line_free_ink(img: &Raster, lines: &LineSettings) -> BinaryRaster {
    let bin = binarize_document(img, lines.threshold);
    let mask = lines.line_image(&bin);
    subtract_ink(&bin, &mask).expect("same dimensions")
}

/// Classical stand-in for a learned symbol detector.
pub fn detect_symbols_classical(
    img: &Raster,
    table_box: Option<BBox>,
    cfg: &DetectorConfig,
    lines: &LineSettings,
) -> Vec<Detection> {
    let ink = line_free_ink(img, lines);
    candidate_boxes(&ink, cfg)
        .into_iter()
        .filter(|b| table_box.map_or(true, |t| !t.intersects(b)))
        .map(|b| {
            let density = ink_in(&ink, &b) as f64 / b.area() as f64;
            Detection {
                bbox: b,
                confidence: (density * 2.0).min(1.0),
                source: DetectionSource::Classical,
            }
        })
        .collect()
}

/// Symbol boxes for `image_id` from a sidecar, clipped to the image.
pub fn ingest_symbol_detections(
    doc: &DetectionSidecar,
    image_id: &str,
    width: u32,
    height: u32,
) -> Vec<Detection> {
    doc.detections_for(image_id, DetectionKind::Symbol)
        .filter_map(|d| {
            d.clamped_box(width, height).map(|bbox| Detection {
                bbox,
                confidence: d.confidence,
                source: DetectionSource::External,
            })
        })
        .collect()
}

/// Greedy non-maximum suppression: highest confidence first (ties broken by
/// smaller `(y, x)`); a box survives if its IoU with every kept box is at
/// most `iou_threshold`.
pub fn nms(dets: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    let mut order: Vec<&Detection> = dets.iter().collect();
    order.sort_by(|a, b| {
        b.confidence
            .total_cmp(&a.confidence)
            .then((a.bbox.y, a.bbox.x, a.bbox.w, a.bbox.h).cmp(&(b.bbox.y, b.bbox.x, b.bbox.w, b.bbox.h)))
    });
    let mut kept: Vec<Detection> = Vec::new();
    for d in order {
        if kept.iter().all(|k| iou(&k.bbox, &d.bbox) <= iou_threshold) {
            kept.push(*d);
        }
    }
    kept
}

/// Answers whether a region contains at least one symbol.
pub trait SymbolFinder: Sync {
    fn finds_symbol(&self, region: &BinaryRaster) -> bool;
}

impl<F> SymbolFinder for F
where
    F: Fn(&BinaryRaster) -> bool + Sync,
{
    fn finds_symbol(&self, region: &BinaryRaster) -> bool {
        self(region)
    }
}

/// The classical detector's component stage, applied to regions that carry
/// no rulings (legend rows after stray-line removal).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComponentFinder {
    pub cfg: DetectorConfig,
}

impl Default for ComponentFinder {
    fn default() -> Self {
        ComponentFinder {
            cfg: DetectorConfig::legend_rows(),
        }
    }
}

impl SymbolFinder for ComponentFinder {
    fn finds_symbol(&self, region: &BinaryRaster) -> bool {
        !candidate_boxes(region, &self.cfg).is_empty()
    }
}

/// Ink ratio of a region, exposed for callers scoring their own boxes.
pub fn ink_density(img: &BinaryRaster, b: &BBox) -> f64 {
    ink_in(img, b) as f64 / b.area() as f64
}

#[allow(unused)]
fn _assert_send_sync() {
    fn check<T: Send + Sync>() {}
    check::<Detection>();
    check::<raster::Raster>();
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn det(x: u32, y: u32, w: u32, h: u32, c: f64) -> Detection {
        Detection {
            bbox: BBox::new(x, y, w, h),
            confidence: c,
            source: DetectionSource::External,
        }
    }

    #[test]
    fn nms_examples() {
        let same = [det(0, 0, 10, 10, 0.9), det(0, 0, 10, 10, 0.8)];
        let kept = nms(&same, 0.5);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].confidence, 0.9);

        let disjoint = [det(0, 0, 5, 5, 0.3), det(20, 20, 5, 5, 0.9), det(40, 0, 5, 5, 0.1)];
        assert_eq!(nms(&disjoint, 0.5).len(), 3);

        // Chain: B overlaps both A and C, A and C are disjoint. Two boxes
        // that are disjoint cannot both reach IoU > 0.5 with a third, so the
        // chain is built at IoU 1/3 against a 0.3 threshold.
        let a = det(0, 0, 10, 10, 0.9);
        let b = det(5, 0, 10, 10, 0.8);
        let c = det(10, 0, 10, 10, 0.7);
        assert!((iou(&a.bbox, &b.bbox) - 1.0 / 3.0).abs() < 1e-12);
        assert!((iou(&b.bbox, &c.bbox) - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(iou(&a.bbox, &c.bbox), 0.0);
        let kept = nms(&[c, b, a], 0.3);
        let boxes: Vec<BBox> = kept.iter().map(|d| d.bbox).collect();
        assert_eq!(boxes, vec![a.bbox, c.bbox]);
    }

    #[test]
    fn blank_image_has_no_detections() {
        let img = Raster::filled(200, 150, 255);
        let dets = detect_symbols_classical(
            &img,
            None,
            &DetectorConfig::default(),
            &LineSettings::default(),
        );
        assert!(dets.is_empty());
    }

    #[test]
    fn long_line_is_subtracted() {
        let img = Raster::from_fn(300, 200, |_, y| if (100..102).contains(&y) { 0 } else { 255 });
        let dets = detect_symbols_classical(
            &img,
            None,
            &DetectorConfig::default(),
            &LineSettings::default(),
        );
        assert!(dets.is_empty(), "{dets:?}");
    }

    #[test]
    fn compact_blob_is_detected_outside_table() {
        let blob = |x: u32, y: u32| (20..32).contains(&x) && (30..40).contains(&y);
        let table = |x: u32, y: u32| (200..212).contains(&x) && (30..40).contains(&y);
        let img = Raster::from_fn(1400, 1000, |x, y| if blob(x, y) || table(x, y) { 0 } else { 255 });
        let dets = detect_symbols_classical(
            &img,
            Some(BBox::new(190, 20, 40, 40)),
            &DetectorConfig::default(),
            &LineSettings::default(),
        );
        assert_eq!(dets.len(), 1);
        assert_eq!(dets[0].bbox, BBox::new(20, 30, 12, 10));
        assert_eq!(dets[0].confidence, 1.0);
    }

    #[test]
    fn ingest_filters_kind() {
        let doc = DetectionSidecar::from_json(
            r#"{"images":[{"id":"a","detections":[
                {"kind":"symbol","x":1,"y":1,"w":5,"h":5,"confidence":0.7},
                {"kind":"table","x":0,"y":0,"w":50,"h":50,"confidence":0.9}]},
                {"id":"b","detections":[{"kind":"symbol","x":1,"y":1,"w":5,"h":5,"confidence":0.7}]}]}"#,
        )
        .unwrap();
        let dets = ingest_symbol_detections(&doc, "a", 100, 100);
        assert_eq!(dets.len(), 1);
        assert_eq!(dets[0].source, DetectionSource::External);
    }

    #[test]
    fn ingest_many_symbols() {
        let mut doc = String::from(r#"{"images":[{"id":"img1","detections":["#);
        for i in 0..35 {
            if i > 0 {
                doc.push(',');
            }
            doc.push_str(&format!(
                r#"{{"kind":"symbol","x":{},"y":10,"w":12,"h":12,"confidence":0.8}}"#,
                i * 20
            ));
        }
        doc.push_str("]}]}");
        let doc = DetectionSidecar::from_json(&doc).unwrap();
        assert_eq!(ingest_symbol_detections(&doc, "img1", 1000, 100).len(), 35);
    }

    #[test]
    fn legend_finder_tells_glyphs_from_words() {
        let word = crate::font::render_text("EMERGENCY LIGHT").unwrap();
        let finder = ComponentFinder::default();
        assert!(!finder.finds_symbol(&word));
        let glyph = BinaryRaster::from_fn(18, 18, |x, y| x == 0 || y == 0 || x == 17 || y == 17 || x == y);
        assert!(finder.finds_symbol(&glyph));
    }

    #[test]
    fn config_validation() {
        assert!(DetectorConfig::default().validate().is_ok());
        let bad = DetectorConfig {
            nms_iou: 1.0,
            ..DetectorConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    fn box_strategy() -> impl Strategy<Value = BBox> {
        (0u32..80, 0u32..80, 1u32..15, 1u32..15).prop_map(|(x, y, w, h)| BBox::new(x, y, w, h))
    }

    fn det_strategy() -> impl Strategy<Value = Detection> {
        (box_strategy(), 0.0f64..=1.0).prop_map(|(bbox, confidence)| Detection {
            bbox,
            confidence,
            source: DetectionSource::Classical,
        })
    }

    proptest! {
        #[test]
        fn iou_properties(a in box_strategy(), b in box_strategy()) {
            let v = iou(&a, &b);
            prop_assert!((0.0..=1.0).contains(&v));
            prop_assert_eq!(v, iou(&b, &a));
            prop_assert_eq!(iou(&a, &a), 1.0);
        }

        #[test]
        fn nms_properties(dets in proptest::collection::vec(det_strategy(), 0..25), t in 0.0f64..0.95) {
            let kept = nms(&dets, t);
            for k in &kept {
                prop_assert!(dets.contains(k));
            }
            for (i, a) in kept.iter().enumerate() {
                for b in &kept[i + 1..] {
                    prop_assert!(iou(&a.bbox, &b.bbox) <= t);
                }
            }
            let mut again = nms(&kept, t);
            let mut first = kept.clone();
            let key = |d: &Detection| (d.bbox, d.confidence.to_bits());
            again.sort_by_key(key);
            first.sort_by_key(key);
            prop_assert_eq!(again, first);
        }

        #[test]
        fn merge_is_order_independent(
            boxes in proptest::collection::vec(box_strategy(), 0..20),
            gap in 0u32..5,
            seed in any::<u64>()
        ) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut shuffled = boxes.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(merge_boxes(&boxes, gap), merge_boxes(&shuffled, gap));
        }
    }
}
