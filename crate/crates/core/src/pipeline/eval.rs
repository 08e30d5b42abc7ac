//! Ground truth, per-image accounting and CSV tables of evaluation rows.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matching::{ClassificationOutcome, Label};
use crate::raster::{iou, BBox};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
    pub label: Label,
}

impl Annotation {
    pub fn bbox(&self) -> BBox {
        BBox::new(self.x, self.y, self.w, self.h)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruthImage {
    pub id: String,
    #[serde(default)]
    pub annotations: Vec<Annotation>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct GroundTruth {
    pub images: Vec<GroundTruthImage>,
}

impl GroundTruth {
    pub fn from_json(text: &str) -> Result<Self> {
        let gt: GroundTruth = serde_json::from_str(text)?;
        for (i, img) in gt.images.iter().enumerate() {
            for (j, a) in img.annotations.iter().enumerate() {
                if a.w == 0 || a.h == 0 {
                    return Err(Error::record(
                        format!("images[{i}].annotations[{j}]"),
                        "box size must be positive",
                    ));
                }
            }
        }
        Ok(gt)
    }

    pub fn image(&self, id: &str) -> Option<&GroundTruthImage> {
        self.images.iter().find(|i| i.id == id)
    }
}

/// One line of the evaluation table.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EvalRow {
    pub image_id: String,
    pub symbols_present: usize,
    pub total_detected: usize,
    pub detected_correctly: usize,
    pub classified_correctly: usize,
}

/// One-to-one matching of detections to ground-truth boxes, taking pairs in
/// order of decreasing IoU (then detection index, then gt index) while both
/// sides are free. Returns `(detection, gt)` index pairs.
pub fn greedy_match(dets: &[BBox], gt: &[BBox], threshold: f64) -> Vec<(usize, usize)> {
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (i, d) in dets.iter().enumerate() {
        for (j, g) in gt.iter().enumerate() {
            let v = iou(d, g);
            if v >= threshold && v > 0.0 {
                pairs.push((v, i, j));
            }
        }
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut det_used = vec![false; dets.len()];
    let mut gt_used = vec![false; gt.len()];
    let mut out = Vec::new();
    for (_, i, j) in pairs {
        if !det_used[i] && !gt_used[j] {
            det_used[i] = true;
            gt_used[j] = true;
            out.push((i, j));
        }
    }
    out
}

/// Counts detections matched to ground truth and correct labels. An
/// unmatched detection labeled outlier also counts as correctly classified.
pub fn evaluate(
    image_id: &str,
    outcomes: &[ClassificationOutcome],
    gt: &GroundTruthImage,
    iou_threshold: f64,
) -> EvalRow {
    let dets: Vec<BBox> = outcomes.iter().map(|o| o.detection.bbox).collect();
    let gts: Vec<BBox> = gt.annotations.iter().map(Annotation::bbox).collect();
    let matched = greedy_match(&dets, &gts, iou_threshold);
    let mut is_matched = vec![false; dets.len()];
    let mut classified = 0;
    for &(i, j) in &matched {
        is_matched[i] = true;
        if outcomes[i].label == gt.annotations[j].label {
            classified += 1;
        }
    }
    classified += outcomes
        .iter()
        .zip(&is_matched)
        .filter(|(o, m)| !**m && o.label == Label::Outlier)
        .count();
    EvalRow {
        image_id: image_id.to_owned(),
        symbols_present: gts.len(),
        total_detected: dets.len(),
        detected_correctly: matched.len(),
        classified_correctly: classified,
    }
}

pub const CSV_HEADER: &str = "image_id,present,detected,detected_correct,classified_correct";

/// Column sums, labeled "Total".
pub fn total_row(rows: &[EvalRow]) -> EvalRow {
    rows.iter().fold(
        EvalRow {
            image_id: "Total".to_owned(),
            ..EvalRow::default()
        },
        |mut t, r| {
            t.symbols_present += r.symbols_present;
            t.total_detected += r.total_detected;
            t.detected_correctly += r.detected_correctly;
            t.classified_correctly += r.classified_correctly;
            t
        },
    )
}

/// Header, one line per image sorted by image id, then the Total line.
pub fn write_csv(rows: &[EvalRow], mut out: impl Write) -> Result<()> {
    let mut sorted: Vec<&EvalRow> = rows.iter().collect();
    sorted.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    writeln!(out, "{CSV_HEADER}")?;
    let total = total_row(rows);
    for r in sorted.into_iter().chain(std::iter::once(&total)) {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.image_id,
            r.symbols_present,
            r.total_detected,
            r.detected_correctly,
            r.classified_correctly
        )?;
    }
    Ok(())
}

pub fn csv_string(rows: &[EvalRow]) -> String {
    let mut buf = Vec::new();
    write_csv(rows, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("ascii output")
}
