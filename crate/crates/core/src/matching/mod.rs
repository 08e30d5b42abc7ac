//! Classifying detected symbols against legend templates.
//!
//! Each query crop is compared with every template by brute-force descriptor
//! matching and the ratio test. With `m` the number of query descriptors
//! that found a neighbor and `n` the number surviving the ratio test, the
//! similarity is
//!
//! ```text
//! s = 1        if n = m > 0
//!     0.1      if n = 1
//!     1 - n/m  if 1 < n < m
//!     0        otherwise
//! ```
//!
//! Matching runs one way, query to template, so `s(q, t)` and `s(t, q)`
//! generally differ.
//!
//! The third branch ranks a template with more surviving matches lower, so
//! classification defaults to [`SimilarityMode::MatchFraction`], which uses
//! `n/m` there and keeps the other branches. [`SimilarityMode::Inverted`]
//! selects the formula above.

pub mod sift;

use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::detect::Detection;
use crate::error::{Error, Result};
use crate::legend::parser::LegendEntry;
use crate::raster::Raster;

pub use sift::{extract_features, Descriptor, FeatureSet, Keypoint, DESCRIPTOR_LEN};

/// Nearest and second-nearest template descriptors for one query descriptor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawMatch {
    pub query: usize,
    pub train: usize,
    pub best: f32,
    /// `+inf` when the template has a single descriptor.
    pub second: f32,
}

fn distance(a: &Descriptor, b: &Descriptor) -> f32 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f32>()
        .sqrt()
}

/// One match per descriptor of `d1`; equal distances go to the lower `d2`
/// index.
pub fn brute_force_match(d1: &[Descriptor], d2: &[Descriptor]) -> Vec<RawMatch> {
    if d2.is_empty() {
        return Vec::new();
    }
    d1.iter()
        .enumerate()
        .map(|(qi, q)| {
            let (mut best, mut second) = (f32::INFINITY, f32::INFINITY);
            let mut train = 0;
            for (ti, t) in d2.iter().enumerate() {
                let d = distance(q, t);
                if d < best {
                    second = best;
                    best = d;
                    train = ti;
                } else if d < second {
                    second = d;
                }
            }
            RawMatch {
                query: qi,
                train,
                best,
                second,
            }
        })
        .collect()
}

/// Matches whose best distance is below `ratio` times the second best.
pub fn ratio_test(matches: &[RawMatch], ratio: f64) -> usize {
    matches
        .iter()
        .filter(|m| f64::from(m.best) < ratio * f64::from(m.second))
        .count()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchStats {
    pub m: usize,
    pub n: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SimilarityMode {
    /// `1 - n/m` for `1 < n < m`.
    Inverted,
    /// `n/m` for `1 < n < m`.
    #[default]
    MatchFraction,
}

pub fn similarity_from_stats(stats: MatchStats, mode: SimilarityMode) -> f64 {
    let MatchStats { m, n } = stats;
    if n == m && m > 0 {
        1.0
    } else if n == 1 {
        0.1
    } else if 1 < n && n < m {
        let frac = n as f64 / m as f64;
        match mode {
            SimilarityMode::Inverted => 1.0 - frac,
            SimilarityMode::MatchFraction => frac,
        }
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityScore {
    pub s: f64,
    pub stats: MatchStats,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatchConfig {
    pub ratio: f64,
    pub outlier_tau: f64,
    pub mode: SimilarityMode,
}

impl Default for MatchConfig {
    fn default() -> Self {
        MatchConfig {
            ratio: 0.75,
            outlier_tau: 0.15,
            mode: SimilarityMode::MatchFraction,
        }
    }
}

impl MatchConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.ratio > 0.0 && self.ratio < 1.0) {
            return Err(Error::Config("ratio must lie in (0, 1)".into()));
        }
        if !(0.0..=1.0).contains(&self.outlier_tau) {
            return Err(Error::Config("outlier_tau must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

pub fn score_features(q: &FeatureSet, t: &FeatureSet, cfg: &MatchConfig) -> SimilarityScore {
    let matches = brute_force_match(&q.descriptors, &t.descriptors);
    let stats = MatchStats {
        m: matches.len(),
        n: ratio_test(&matches, cfg.ratio),
    };
    SimilarityScore {
        s: similarity_from_stats(stats, cfg.mode),
        stats,
    }
}

/// Similarity of query `q` to template `t`.
pub fn similarity(q: &Raster, t: &Raster, cfg: &MatchConfig) -> SimilarityScore {
    score_features(&extract_features(q), &extract_features(t), cfg)
}

/// A template class id or the outlier label. Serialized as the integer or
/// the string `"outlier"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Label {
    Class(usize),
    Outlier,
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::Class(c) => write!(f, "{c}"),
            Label::Outlier => f.write_str("outlier"),
        }
    }
}

impl Serialize for Label {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Label::Class(c) => s.serialize_u64(*c as u64),
            Label::Outlier => s.serialize_str("outlier"),
        }
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Class(u64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Class(c) => Ok(Label::Class(c as usize)),
            Raw::Text(t) if t == "outlier" => Ok(Label::Outlier),
            Raw::Text(t) => Err(serde::de::Error::custom(format!(
                "label must be an integer or \"outlier\", got \"{t}\""
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationOutcome {
    pub detection: Detection,
    pub label: Label,
    pub best_score: f64,
    pub per_template_scores: Vec<(usize, f64)>,
}

/// Highest score wins, lowest class id on ties; below `tau` is an outlier.
/// Returns the winning score too.
pub fn select_label(scores: &[(usize, f64)], tau: f64) -> (Label, f64) {
    let best = scores
        .iter()
        .copied()
        .min_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    match best {
        Some((c, s)) if s >= tau => (Label::Class(c), s),
        Some((_, s)) => (Label::Outlier, s),
        None => (Label::Outlier, 0.0),
    }
}

/// Templates with their features extracted once.
#[derive(Debug, Clone)]
pub struct Classifier {
    templates: Vec<(usize, FeatureSet)>,
    cfg: MatchConfig,
}

impl Classifier {
    pub fn new(templates: &[LegendEntry], cfg: MatchConfig) -> Result<Self> {
        let symbols: Vec<(usize, &Raster)> =
            templates.iter().map(|t| (t.class_id, &t.symbol)).collect();
        Self::from_symbols(&symbols, cfg)
    }

    pub fn from_symbols(symbols: &[(usize, &Raster)], cfg: MatchConfig) -> Result<Self> {
        if symbols.is_empty() {
            return Err(Error::NoTemplates);
        }
        cfg.validate()?;
        let templates = symbols
            .par_iter()
            .map(|(c, img)| (*c, extract_features(img)))
            .collect();
        Ok(Classifier { templates, cfg })
    }

    pub fn config(&self) -> &MatchConfig {
        &self.cfg
    }

    pub fn scores(&self, query: &FeatureSet) -> Vec<(usize, SimilarityScore)> {
        self.templates
            .iter()
            .map(|(c, t)| (*c, score_features(query, t, &self.cfg)))
            .collect()
    }

    pub fn classify(&self, crop: &Raster, detection: Detection) -> ClassificationOutcome {
        let q = extract_features(crop);
        let per_template_scores: Vec<(usize, f64)> =
            self.scores(&q).into_iter().map(|(c, s)| (c, s.s)).collect();
        let (label, best_score) = select_label(&per_template_scores, self.cfg.outlier_tau);
        ClassificationOutcome {
            detection,
            label,
            best_score,
            per_template_scores,
        }
    }

    /// Classifies every `(crop, detection)` pair, in input order.
    pub fn classify_all(&self, items: &[(Raster, Detection)]) -> Vec<ClassificationOutcome> {
        items
            .par_iter()
            .map(|(crop, det)| self.classify(crop, *det))
            .collect()
    }
}

/// Scores `det_crop` against every template.
pub fn classify(
    det_crop: &Raster,
    detection: Detection,
    templates: &[LegendEntry],
    cfg: &MatchConfig,
) -> Result<ClassificationOutcome> {
    Ok(Classifier::new(templates, *cfg)?.classify(det_crop, detection))
}

/// Class of the nearest template embedding, lowest class id on ties.
pub fn classify_by_embedding(f: &[f64], templates: &[(usize, Vec<f64>)]) -> Result<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (c, e) in templates {
        if e.len() != f.len() {
            return Err(Error::EmbeddingLength {
                expected: f.len(),
                got: e.len(),
            });
        }
        let d = f
            .iter()
            .zip(e)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let better = match best {
            None => true,
            Some((bc, bd)) => d < bd || (d == bd && *c < bc),
        };
        if better {
            best = Some((*c, d));
        }
    }
    best.map(|(c, _)| c).ok_or(Error::NoTemplates)
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ClassCounts {
    pub per_class: BTreeMap<usize, usize>,
    pub outliers: usize,
}

impl ClassCounts {
    pub fn total(&self) -> usize {
        self.per_class.values().sum::<usize>() + self.outliers
    }
}

pub fn count_by_class(outcomes: &[ClassificationOutcome]) -> ClassCounts {
    let mut counts = ClassCounts::default();
    for o in outcomes {
        match o.label {
            Label::Class(c) => *counts.per_class.entry(c).or_default() += 1,
            Label::Outlier => counts.outliers += 1,
        }
    }
    counts
}
