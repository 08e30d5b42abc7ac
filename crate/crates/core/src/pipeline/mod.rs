//! End-to-end flow: locate the legend table, parse it into templates,
//! detect symbols in the rest of the drawing, classify and count them.

pub mod eval;
pub mod fixture;
pub mod glyphs;
pub mod words;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::detect::{
    detect_symbols_classical, ingest_symbol_detections, nms, ComponentFinder, Detection,
    DetectorConfig, LineSettings,
};
use crate::error::{Error, Result};
use crate::legend::locator::{
    extract_table_classical, ingest_table_detections, select_table, LocatorConfig,
    TableDetection, WordBox,
};
use crate::legend::parser::{assign_name_text, parse_table, Direction, ParsedTable, ParserConfig, Span};
use crate::matching::{
    classify_by_embedding, count_by_class, ClassCounts, ClassificationOutcome, Classifier, Label,
    MatchConfig,
};
use crate::raster::{crop, normalize_polarity, render_overlay, BBox, OverlayBox, Raster};
use crate::sidecar::{DetectionSidecar, EmbeddingOwner, EmbeddingSidecar};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub lines: LineSettings,
    pub locator: LocatorConfig,
    pub parser: ParserConfig,
    pub detector: DetectorConfig,
    pub matching: MatchConfig,
    pub eval_iou: f64,
    /// Run the anchor-word table locator.
    pub classical_table: bool,
    /// Run the classical symbol detector.
    pub classical_symbols: bool,
    /// Pixel agreement required by the built-in word finder.
    pub word_agreement: f64,
    /// Extra words to look for; found words inside a name cell become the
    /// entry's name text.
    pub vocabulary: Vec<String>,
    /// Store per-stage wall times in the report. Off by default so reports
    /// are reproducible byte for byte.
    pub record_timings: bool,
    pub inputs: Vec<PathBuf>,
    pub detection_sidecar: Option<PathBuf>,
    pub embedding_sidecar: Option<PathBuf>,
    pub ground_truth: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            lines: LineSettings::default(),
            locator: LocatorConfig::default(),
            parser: ParserConfig::default(),
            detector: DetectorConfig::default(),
            matching: MatchConfig::default(),
            eval_iou: 0.5,
            classical_table: true,
            classical_symbols: true,
            word_agreement: words::DEFAULT_AGREEMENT,
            vocabulary: Vec::new(),
            record_timings: false,
            inputs: Vec::new(),
            detection_sidecar: None,
            embedding_sidecar: None,
            ground_truth: None,
            output_dir: None,
        }
    }
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: PipelineConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| {
            Error::Config(format!("cannot read {}: {e}", path.as_ref().display()))
        })?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.lines.validate()?;
        self.parser.validate()?;
        self.detector.validate()?;
        self.matching.validate()?;
        if !(self.eval_iou > 0.0 && self.eval_iou <= 1.0) {
            return Err(Error::Config("eval_iou must lie in (0, 1]".into()));
        }
        if !(self.word_agreement > 0.0 && self.word_agreement <= 1.0) {
            return Err(Error::Config("word_agreement must lie in (0, 1]".into()));
        }
        if self.locator.anchors.is_empty() {
            return Err(Error::Config("at least one anchor word is needed".into()));
        }
        Ok(())
    }
}

/// Detections and embeddings supplied from outside.
#[derive(Debug, Clone, Default)]
pub struct Sidecars {
    pub detections: Option<DetectionSidecar>,
    pub embeddings: Option<EmbeddingSidecar>,
}

impl Sidecars {
    pub fn load(cfg: &PipelineConfig) -> Result<Self> {
        let detections = match &cfg.detection_sidecar {
            Some(p) => Some(DetectionSidecar::from_json(&std::fs::read_to_string(p)?)?),
            None => None,
        };
        let embeddings = match &cfg.embedding_sidecar {
            Some(p) => Some(EmbeddingSidecar::from_json(&std::fs::read_to_string(p)?)?),
            None => None,
        };
        Ok(Sidecars {
            detections,
            embeddings,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LegendRecord {
    pub class_id: usize,
    pub name_text: Option<String>,
    /// Boxes in drawing coordinates.
    pub symbol_box: BBox,
    pub name_box: BBox,
    pub direction: Direction,
    pub source_row: Span,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub image_id: String,
    pub width: u32,
    pub height: u32,
    pub table: TableDetection,
    pub legend: Vec<LegendRecord>,
    pub skipped_rows: Vec<Span>,
    pub detections: Vec<Detection>,
    pub outcomes: Vec<ClassificationOutcome>,
    pub counts: ClassCounts,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub timings_ms: BTreeMap<String, f64>,
}

impl Report {
    /// Fails if the counts disagree with the outcomes.
    pub fn check(&self) -> Result<()> {
        if count_by_class(&self.outcomes) != self.counts || self.outcomes.len() != self.detections.len() {
            return Err(Error::record(
                &self.image_id,
                "report counts disagree with its outcomes",
            ));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        self.check()?;
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let r: Report = serde_json::from_str(text)?;
        r.check()?;
        Ok(r)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }
}

/// A report plus the intermediate images behind it.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: Report,
    pub table_crop: Raster,
    pub parsed: ParsedTable,
    /// Detection crops, aligned with `report.detections`.
    pub crops: Vec<Raster>,
    pub words: Vec<WordBox>,
}

struct Clock {
    on: bool,
    last: Instant,
    times: BTreeMap<String, f64>,
}

impl Clock {
    fn new(on: bool) -> Self {
        Clock {
            on,
            last: Instant::now(),
            times: BTreeMap::new(),
        }
    }

    fn lap(&mut self, stage: &str) {
        if self.on {
            let now = Instant::now();
            self.times
                .insert(stage.to_owned(), (now - self.last).as_secs_f64() * 1000.0);
            self.last = now;
        }
    }
}

fn embedding_outcomes(
    emb: &EmbeddingSidecar,
    legend: &[LegendRecord],
    detections: &[Detection],
) -> Result<Vec<ClassificationOutcome>> {
    let missing = |owner: EmbeddingOwner| {
        Error::record(owner.id(), "no embedding for this id in the embedding sidecar")
    };
    let mut templates = Vec::with_capacity(legend.len());
    for e in legend {
        let owner = EmbeddingOwner::Template(e.class_id);
        templates.push((e.class_id, emb.get(owner).ok_or_else(|| missing(owner))?.to_vec()));
    }
    detections
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let owner = EmbeddingOwner::Detection(i);
            let f = emb.get(owner).ok_or_else(|| missing(owner))?;
            let class = classify_by_embedding(f, &templates)?;
            let per_template_scores: Vec<(usize, f64)> = templates
                .iter()
                .map(|(c, t)| {
                    let dist = f.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                    (*c, 1.0 / (1.0 + dist))
                })
                .collect();
            let best_score = per_template_scores
                .iter()
                .find(|(c, _)| *c == class)
                .map_or(0.0, |(_, s)| *s);
            Ok(ClassificationOutcome {
                detection: *d,
                label: Label::Class(class),
                best_score,
                per_template_scores,
            })
        })
        .collect()
}

/// Runs every stage on an already loaded drawing.
pub fn run_on_raster(
    img: &Raster,
    image_id: &str,
    cfg: &PipelineConfig,
    sidecars: &Sidecars,
) -> Result<RunOutput> {
    cfg.validate()?;
    let mut clock = Clock::new(cfg.record_timings);
    let img = normalize_polarity(img, cfg.lines.threshold);
    let (w, h) = (img.width(), img.height());

    let mut vocabulary = cfg.locator.anchors.clone();
    vocabulary.extend(cfg.vocabulary.iter().cloned());
    let words = if cfg.classical_table || !cfg.vocabulary.is_empty() {
        words::locate_words_builtin(&img, &vocabulary, cfg.lines.threshold, cfg.word_agreement)
    } else {
        Vec::new()
    };
    clock.lap("words");

    let mut tables = Vec::new();
    if cfg.classical_table {
        tables.extend(extract_table_classical(&img, &words, &cfg.locator, &cfg.lines));
    }
    if let Some(doc) = &sidecars.detections {
        tables.extend(ingest_table_detections(doc, image_id, w, h));
    }
    let table = select_table(&tables).ok_or(Error::TableNotFound)?;
    clock.lap("locate");

    let table_crop = crop(&img, table.bbox)?;
    let finder = ComponentFinder::default();
    let mut parsed = parse_table(&table_crop, &finder, &cfg.parser)?;
    let local_words: Vec<WordBox> = words
        .iter()
        .filter(|wb| table.bbox.contains(&wb.bbox))
        .map(|wb| WordBox {
            bbox: BBox::new(wb.bbox.x - table.bbox.x, wb.bbox.y - table.bbox.y, wb.bbox.w, wb.bbox.h),
            ..wb.clone()
        })
        .filter(|wb| !cfg.locator.anchors.contains(&wb.text))
        .collect();
    assign_name_text(&mut parsed.entries, &local_words);
    let legend: Vec<LegendRecord> = parsed
        .entries
        .iter()
        .map(|e| LegendRecord {
            class_id: e.class_id,
            name_text: e.name_text.clone(),
            symbol_box: e.symbol_box.offset(table.bbox.x, table.bbox.y),
            name_box: e.name_box.offset(table.bbox.x, table.bbox.y),
            direction: e.direction,
            source_row: e.source_row,
        })
        .collect();
    clock.lap("parse");

    let mut candidates = Vec::new();
    if cfg.classical_symbols {
        candidates.extend(detect_symbols_classical(
            &img,
            Some(table.bbox),
            &cfg.detector,
            &cfg.lines,
        ));
    }
    if let Some(doc) = &sidecars.detections {
        candidates.extend(
            ingest_symbol_detections(doc, image_id, w, h)
                .into_iter()
                .filter(|d| !table.bbox.intersects(&d.bbox)),
        );
    }
    let mut detections = nms(&candidates, cfg.detector.nms_iou);
    detections.sort_by_key(|d| (d.bbox.y, d.bbox.x, d.bbox.w, d.bbox.h));
    clock.lap("detect");

    let crops: Vec<Raster> = detections
        .iter()
        .map(|d| crop(&img, d.bbox))
        .collect::<Result<_>>()?;
    let outcomes = match &sidecars.embeddings {
        Some(emb) => embedding_outcomes(emb, &legend, &detections)?,
        None => {
            let classifier = Classifier::new(&parsed.entries, cfg.matching)?;
            let items: Vec<(Raster, Detection)> =
                crops.iter().cloned().zip(detections.iter().copied()).collect();
            classifier.classify_all(&items)
        }
    };
    let counts = count_by_class(&outcomes);
    clock.lap("classify");

    let report = Report {
        image_id: image_id.to_owned(),
        width: w,
        height: h,
        table,
        legend,
        skipped_rows: parsed.skipped.iter().map(|(s, _)| *s).collect(),
        detections,
        outcomes,
        counts,
        timings_ms: clock.times,
    };
    report.check()?;
    Ok(RunOutput {
        report,
        table_crop,
        parsed,
        crops,
        words,
    })
}

/// File stem of `path`, used as the image id.
pub fn image_id_of(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

/// Loads a grayscale PNG and runs the pipeline on it.
pub fn run_pipeline(path: &Path, cfg: &PipelineConfig, sidecars: &Sidecars) -> Result<(Raster, RunOutput)> {
    let img = Raster::load_png(path)?;
    let out = run_on_raster(&img, &image_id_of(path), cfg, sidecars)?;
    Ok((img, out))
}

/// Writes table, row, symbol, name and detection crops plus an annotated
/// overlay under `dir`.
pub fn write_audit(out: &RunOutput, img: &Raster, dir: &Path) -> Result<()> {
    for sub in ["rows", "symbols", "names", "detections"] {
        std::fs::create_dir_all(dir.join(sub))?;
    }
    out.table_crop.save_png(dir.join("table.png"))?;
    out.parsed.cleaned.to_raster().save_png(dir.join("table_clean.png"))?;
    let width = out.parsed.cleaned.width();
    for e in &out.parsed.entries {
        let row = out
            .parsed
            .cleaned
            .crop(BBox::new(0, e.source_row.start, width, e.source_row.len()))?;
        row.to_raster()
            .save_png(dir.join("rows").join(format!("row_{:03}.png", e.class_id)))?;
        e.symbol
            .save_png(dir.join("symbols").join(format!("class_{:03}.png", e.class_id)))?;
        e.name_img
            .save_png(dir.join("names").join(format!("class_{:03}.png", e.class_id)))?;
    }
    for (i, c) in out.crops.iter().enumerate() {
        c.save_png(dir.join("detections").join(format!("det_{i:04}.png")))?;
    }
    let mut boxes = vec![OverlayBox {
        bbox: out.report.table.bbox,
        label: "LEGEND".into(),
        color_class: 7,
    }];
    for o in &out.report.outcomes {
        let color_class = match o.label {
            Label::Class(c) => c % 7,
            Label::Outlier => 0,
        };
        boxes.push(OverlayBox {
            bbox: o.detection.bbox,
            label: o.label.to_string(),
            color_class,
        });
    }
    render_overlay(img, &boxes).save_png(dir.join("overlay.png"))?;
    Ok(())
}
