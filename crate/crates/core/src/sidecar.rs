//! JSON sidecar files carrying externally produced detections and embeddings.
//!
//! Detection sidecar:
//!
//! ```json
//! {"images": [{"id": "sheet-01", "detections": [
//!     {"kind": "table", "x": 10, "y": 20, "w": 300, "h": 120, "confidence": 0.98}
//! ]}]}
//! ```
//!
//! Embedding sidecar:
//!
//! ```json
//! {"dim": 3, "entries": [{"id": "det:0", "values": [0.1, 0.2, 0.3]},
//!                        {"id": "tpl:2", "values": [0.0, 1.0, 0.5]}]}
//! ```
//!
//! Unknown fields are ignored. Every validation failure names the offending
//! record by its JSON path.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::raster::BBox;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectionKind {
    Table,
    Symbol,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SidecarDetection {
    pub kind: DetectionKind,
    pub x: i64,
    pub y: i64,
    pub w: i64,
    pub h: i64,
    pub confidence: f64,
}

impl SidecarDetection {
    /// The box clipped to a `width x height` image, or `None` if nothing remains.
    pub fn clamped_box(&self, width: u32, height: u32) -> Option<BBox> {
        let x0 = self.x.clamp(0, i64::from(width));
        let y0 = self.y.clamp(0, i64::from(height));
        let x1 = (self.x + self.w).clamp(0, i64::from(width));
        let y1 = (self.y + self.h).clamp(0, i64::from(height));
        (x1 > x0 && y1 > y0)
            .then(|| BBox::new(x0 as u32, y0 as u32, (x1 - x0) as u32, (y1 - y0) as u32))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SidecarImage {
    pub id: String,
    #[serde(default)]
    pub detections: Vec<SidecarDetection>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DetectionSidecar {
    pub images: Vec<SidecarImage>,
}

fn field<'a>(v: &'a Value, name: &str, path: &str) -> Result<&'a Value> {
    v.get(name)
        .ok_or_else(|| Error::record(path, format!("missing field \"{name}\"")))
}

fn int_field(v: &Value, name: &str, path: &str) -> Result<i64> {
    field(v, name, path)?
        .as_i64()
        .ok_or_else(|| Error::record(path, format!("field \"{name}\" must be an integer")))
}

impl DetectionSidecar {
    pub fn from_json(text: &str) -> Result<Self> {
        let root: Value = serde_json::from_str(text)?;
        let images = root
            .get("images")
            .and_then(Value::as_array)
            .ok_or_else(|| Error::record("$", "expected an \"images\" array"))?;
        let mut out = Vec::with_capacity(images.len());
        for (i, img) in images.iter().enumerate() {
            let path = format!("images[{i}]");
            let id = field(img, "id", &path)?
                .as_str()
                .ok_or_else(|| Error::record(&path, "field \"id\" must be a string"))?
                .to_owned();
            let mut detections = Vec::new();
            if let Some(dets) = img.get("detections") {
                let dets = dets
                    .as_array()
                    .ok_or_else(|| Error::record(&path, "\"detections\" must be an array"))?;
                for (j, d) in dets.iter().enumerate() {
                    detections.push(parse_detection(d, &format!("{path}.detections[{j}]"))?);
                }
            }
            out.push(SidecarImage { id, detections });
        }
        Ok(DetectionSidecar { images: out })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("sidecar serializes")
    }

    /// All detections of one kind for `image_id`, across repeated image entries.
    pub fn detections_for(
        &self,
        image_id: &str,
        kind: DetectionKind,
    ) -> impl Iterator<Item = &SidecarDetection> {
        let image_id = image_id.to_owned();
        self.images
            .iter()
            .filter(move |img| img.id == image_id)
            .flat_map(|img| img.detections.iter())
            .filter(move |d| d.kind == kind)
    }
}

fn parse_detection(d: &Value, path: &str) -> Result<SidecarDetection> {
    let kind = match field(d, "kind", path)?.as_str() {
        Some("table") => DetectionKind::Table,
        Some("symbol") => DetectionKind::Symbol,
        Some(other) => {
            return Err(Error::record(path, format!("unknown kind \"{other}\"")));
        }
        None => return Err(Error::record(path, "field \"kind\" must be a string")),
    };
    let (x, y) = (int_field(d, "x", path)?, int_field(d, "y", path)?);
    let (w, h) = (int_field(d, "w", path)?, int_field(d, "h", path)?);
    if w <= 0 || h <= 0 {
        return Err(Error::record(
            path,
            format!("box size must be positive, got {w}x{h}"),
        ));
    }
    let confidence = field(d, "confidence", path)?
        .as_f64()
        .ok_or_else(|| Error::record(path, "field \"confidence\" must be a number"))?;
    if !(0.0..=1.0).contains(&confidence) {
        return Err(Error::record(
            path,
            format!("confidence {confidence} outside [0, 1]"),
        ));
    }
    Ok(SidecarDetection {
        kind,
        x,
        y,
        w,
        h,
        confidence,
    })
}

/// Who an embedding belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EmbeddingOwner {
    Detection(usize),
    Template(usize),
}

impl EmbeddingOwner {
    pub fn parse(id: &str) -> Option<Self> {
        if let Some(i) = id.strip_prefix("det:") {
            i.parse().ok().map(EmbeddingOwner::Detection)
        } else if let Some(c) = id.strip_prefix("tpl:") {
            c.parse().ok().map(EmbeddingOwner::Template)
        } else {
            None
        }
    }

    pub fn id(&self) -> String {
        match self {
            EmbeddingOwner::Detection(i) => format!("det:{i}"),
            EmbeddingOwner::Template(c) => format!("tpl:{c}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingEntry {
    pub id: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingSidecar {
    pub dim: usize,
    pub entries: Vec<EmbeddingEntry>,
}

impl EmbeddingSidecar {
    pub fn from_json(text: &str) -> Result<Self> {
        let doc: EmbeddingSidecar = serde_json::from_str(text)?;
        for (i, e) in doc.entries.iter().enumerate() {
            let path = format!("entries[{i}]");
            if EmbeddingOwner::parse(&e.id).is_none() {
                return Err(Error::record(
                    path,
                    format!("id \"{}\" is neither det:<i> nor tpl:<c>", e.id),
                ));
            }
            if e.values.len() != doc.dim {
                return Err(Error::record(
                    path,
                    format!("expected {} values, found {}", doc.dim, e.values.len()),
                ));
            }
            if e.values.iter().any(|v| !v.is_finite()) {
                return Err(Error::record(path, "values must be finite"));
            }
        }
        Ok(doc)
    }

    pub fn get(&self, owner: EmbeddingOwner) -> Option<&[f64]> {
        let id = owner.id();
        self.entries
            .iter()
            .find(|e| e.id == id)
            .map(|e| e.values.as_slice())
    }
}
