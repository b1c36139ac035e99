//! Segmentation scoring of hard maps against annotated noun segments.
//!
//! mIoU is the mean over prediction/ground-truth pairs (not over classes).
//! A closed class list restricts the pairs to nouns whose `class_label`
//! matches the list; the open setting keeps every pair.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use crate::error::{DaamError, Result};
use crate::mask::Mask;
use crate::par::Execution;

/// The 80 COCO detection class names, one per line.
pub const COCO80: &str = include_str!("../data/coco80.txt");

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthSegment {
    pub image_id: String,
    pub noun: String,
    pub class_label: Option<String>,
    pub mask: Mask,
}

/// Intersection over union. Two empty masks score 1.
pub fn iou(pred: &Mask, gt: &Mask) -> Result<f64> {
    if !pred.same_dims(gt) {
        return Err(DaamError::DimMismatch(format!(
            "prediction {}x{} vs ground truth {}x{}",
            pred.height, pred.width, gt.height, gt.width
        )));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&p, &g) in pred.data.iter().zip(&gt.data) {
        inter += (p && g) as usize;
        union += (p || g) as usize;
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// Normalizes a class name for matching: lowercase, single spaces, and a
/// crude plural-to-singular reduction applied to the last word.
pub fn class_key(name: &str) -> String {
    let lower = name.trim().to_lowercase();
    let mut words: Vec<String> = lower.split_whitespace().map(str::to_string).collect();
    if let Some(last) = words.last_mut() {
        *last = singularize(last);
    }
    words.join(" ")
}

fn singularize(w: &str) -> String {
    if w.len() > 3 && w.ends_with("ies") {
        return format!("{}y", &w[..w.len() - 3]);
    }
    for suffix in ["ches", "shes", "sses", "xes"] {
        if w.len() > suffix.len() + 1 && w.ends_with(suffix) {
            return w[..w.len() - 2].to_string();
        }
    }
    if w.len() > 3 && w.ends_with('s') && !w.ends_with("ss") && !w.ends_with("us") {
        return w[..w.len() - 1].to_string();
    }
    w.to_string()
}

#[derive(Debug, Clone, PartialEq)]
pub enum Restriction {
    ClosedList(Vec<String>),
    Open,
}

impl Restriction {
    pub fn coco80() -> Self {
        Restriction::ClosedList(parse_class_list(COCO80))
    }

    pub fn from_class_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| DaamError::io(path, e))?;
        Ok(Restriction::ClosedList(parse_class_list(&text)))
    }

    pub fn name(&self) -> &'static str {
        match self {
            Restriction::ClosedList(_) => "closed",
            Restriction::Open => "open",
        }
    }

    fn matcher(&self) -> Option<HashSet<String>> {
        match self {
            Restriction::ClosedList(names) => Some(names.iter().map(|n| class_key(n)).collect()),
            Restriction::Open => None,
        }
    }
}

/// One class per non-empty line; `#` starts a comment.
pub fn parse_class_list(text: &str) -> Vec<String> {
    text.lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect()
}

/// How a prediction mask was produced.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Method {
    Daam { tau: f64 },
    Random,
}

impl Method {
    pub fn tau(&self) -> Option<f64> {
        match self {
            Method::Daam { tau } => Some(*tau),
            Method::Random => None,
        }
    }

    fn sort_key(&self) -> (u8, u64) {
        match self {
            Method::Daam { tau } => (0, tau.to_bits()),
            Method::Random => (1, 0),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Daam { tau } => write!(f, "DAAM-{tau}"),
            Method::Random => f.write_str("Random"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct EvalPair {
    pub method: Method,
    pub prediction: Mask,
    pub truth: GroundTruthSegment,
}

#[derive(Debug, Clone)]
pub struct EvalConfig {
    pub restriction: Restriction,
    pub execution: Execution,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            restriction: Restriction::Open,
            execution: Execution::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub image_id: String,
    pub noun: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub class_label: Option<String>,
    pub method: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodAggregate {
    pub method: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    pub miou: f64,
    pub pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub restriction: String,
    pub aggregates: Vec<MethodAggregate>,
    pub records: Vec<PairRecord>,
    pub evaluated: usize,
    /// Pairs dropped because their class is not in the closed list.
    pub excluded: usize,
}

impl EvalReport {
    pub fn miou(&self, method: &str) -> Option<f64> {
        self.aggregates.iter().find(|a| a.method == method).map(|a| a.miou)
    }

    /// Writes the per-pair records as CSV.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["restriction", "image_id", "noun", "class_label", "method", "tau", "iou"])?;
        for r in &self.records {
            w.write_record([
                self.restriction.as_str(),
                &r.image_id,
                &r.noun,
                r.class_label.as_deref().unwrap_or(""),
                &r.method,
                &r.tau.map(|t| t.to_string()).unwrap_or_default(),
                &r.iou.to_string(),
            ])?;
        }
        w.flush().map_err(|e| DaamError::io(path, e))
    }
}

/// Scores every pair surviving the restriction and averages per method.
pub fn evaluate(pairs: &[EvalPair], config: &EvalConfig) -> Result<EvalReport> {
    let matcher = config.restriction.matcher();
    let included: Vec<&EvalPair> = pairs
        .iter()
        .filter(|p| match &matcher {
            None => true,
            Some(set) => p
                .truth
                .class_label
                .as_ref()
                .is_some_and(|c| set.contains(&class_key(c))),
        })
        .collect();
    if included.is_empty() {
        return Err(DaamError::EmptyEvaluation);
    }
    let ious = config.execution.map(&included, |p| iou(&p.prediction, &p.truth.mask));

    let mut records = Vec::with_capacity(included.len());
    let mut groups: BTreeMap<(u8, u64), (Method, f64, usize)> = BTreeMap::new();
    for (p, v) in included.iter().zip(ious) {
        let v = v?;
        records.push(PairRecord {
            image_id: p.truth.image_id.clone(),
            noun: p.truth.noun.clone(),
            class_label: p.truth.class_label.clone(),
            method: p.method.to_string(),
            tau: p.method.tau(),
            iou: v,
        });
        let g = groups.entry(p.method.sort_key()).or_insert((p.method, 0.0, 0));
        g.1 += v;
        g.2 += 1;
    }
    let aggregates = groups
        .into_values()
        .map(|(m, sum, n)| MethodAggregate {
            method: m.to_string(),
            tau: m.tau(),
            miou: sum / n as f64,
            pairs: n,
        })
        .collect();
    Ok(EvalReport {
        restriction: config.restriction.name().to_string(),
        aggregates,
        evaluated: records.len(),
        excluded: pairs.len() - included.len(),
        records,
    })
}

/// Per-pixel fair coin flips from xoshiro256++ seeded through SplitMix64
/// (`seed_from_u64`); a pixel is set when the top bit of the next 64-bit
/// output is 1. Pixels are drawn in row-major order.
pub fn random_baseline(height: usize, width: usize, seed: u64) -> Mask {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let data = (0..height * width).map(|_| rng.next_u64() >> 63 == 1).collect();
    Mask { height, width, data }
}

/// Seed for the `index`-th random prediction of a run seeded with `seed`.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationEntry {
    pub image_id: String,
    pub noun: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_label: Option<String>,
    /// Absent when the noun was not depicted in the generated image.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_file: Option<PathBuf>,
}

pub const ANNOTATIONS_FILE: &str = "annotations.json";

/// Ground truth loaded from an annotation directory.
#[derive(Debug, Clone, Default)]
pub struct GroundTruth {
    pub segments: Vec<GroundTruthSegment>,
    /// Annotated nouns without a depicted instance.
    pub absent: Vec<AnnotationEntry>,
}

pub fn read_annotations(dir: &Path) -> Result<GroundTruth> {
    let path = dir.join(ANNOTATIONS_FILE);
    let text = fs::read_to_string(&path).map_err(|e| DaamError::io(&path, e))?;
    let entries: Vec<AnnotationEntry> = serde_json::from_str(&text)?;
    let mut gt = GroundTruth::default();
    for e in entries {
        if e.noun.trim().is_empty() {
            return Err(DaamError::Annotation(format!("empty noun for image {}", e.image_id)));
        }
        match &e.mask_file {
            Some(f) => {
                let mask = Mask::read_png(&dir.join(f))?;
                gt.segments.push(GroundTruthSegment {
                    image_id: e.image_id,
                    noun: e.noun,
                    class_label: e.class_label,
                    mask,
                });
            }
            None => gt.absent.push(e),
        }
    }
    Ok(gt)
}

pub fn write_annotations(dir: &Path, entries: &[AnnotationEntry]) -> Result<()> {
    let mut text = serde_json::to_string_pretty(entries)?;
    text.push('\n');
    let path = dir.join(ANNOTATIONS_FILE);
    fs::write(&path, text).map_err(|e| DaamError::io(path, e))
}
