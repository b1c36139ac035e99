//! Coverage of word hard maps grouped by part-of-speech tag.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attribution::{threshold, word_heat_maps, AttributionConfig, HardMask};
use crate::error::{DaamError, Result};
use crate::tensor_store::SliceSource;

pub const DEFAULT_TAU: f64 = 0.4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntensityRecord {
    pub image_id: String,
    pub word: String,
    pub word_index: usize,
    pub pos_tag: String,
    pub tau: f64,
    /// Fraction of image pixels set in the word's hard map.
    pub intensity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosGroup {
    pub pos_tag: String,
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PosSummary {
    pub groups: Vec<PosGroup>,
}

impl PosSummary {
    pub fn group(&self, tag: &str) -> Option<&PosGroup> {
        self.groups.iter().find(|g| g.pos_tag == tag)
    }
}

pub fn map_intensity(mask: &HardMask) -> f64 {
    mask.coverage()
}

/// Linear-interpolation quantile of ascending-sorted, non-empty data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Groups records by tag (sorted by tag name). Statistics are computed on
/// sorted values, so the result does not depend on record order.
pub fn summarize(records: &[IntensityRecord]) -> PosSummary {
    let mut by_tag: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for r in records {
        by_tag.entry(r.pos_tag.as_str()).or_default().push(r.intensity);
    }
    let groups = by_tag
        .into_iter()
        .filter(|(_, v)| !v.is_empty())
        .map(|(tag, mut v)| {
            v.sort_by(f64::total_cmp);
            PosGroup {
                pos_tag: tag.to_string(),
                count: v.len(),
                mean: v.iter().sum::<f64>() / v.len() as f64,
                median: quantile_sorted(&v, 0.5),
                q1: quantile_sorted(&v, 0.25),
                q3: quantile_sorted(&v, 0.75),
                min: v[0],
                max: v[v.len() - 1],
            }
        })
        .collect();
    PosSummary { groups }
}

/// Intensity records for every tagged word of one dump.
pub fn word_intensities<S: SliceSource>(
    source: &S,
    image_id: &str,
    tau: f64,
    config: &AttributionConfig,
) -> Result<Vec<IntensityRecord>> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(DaamError::OutOfRange(tau));
    }
    let tagged: Vec<_> = source
        .manifest()
        .words()
        .into_iter()
        .filter(|w| w.pos_tag.is_some())
        .collect();
    if tagged.is_empty() {
        return Ok(Vec::new());
    }
    let indices: Vec<usize> = tagged.iter().map(|w| w.word_index).collect();
    let maps = word_heat_maps(source, &indices, config)?;
    Ok(tagged
        .into_iter()
        .zip(maps)
        .map(|(w, map)| IntensityRecord {
            image_id: image_id.to_string(),
            word: w.text,
            word_index: w.word_index,
            pos_tag: w.pos_tag.unwrap_or_default(),
            tau,
            intensity: map_intensity(&threshold(&map, tau)),
        })
        .collect())
}

pub fn write_records_csv(records: &[IntensityRecord], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| DaamError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attribution::{HeatMap, Subject};
    use proptest::prelude::*;

    fn rec(tag: &str, v: f64) -> IntensityRecord {
        IntensityRecord {
            image_id: "i".into(),
            word: "w".into(),
            word_index: 0,
            pos_tag: tag.into(),
            tau: 0.4,
            intensity: v,
        }
    }

    #[test]
    fn intensity_examples() {
        let map = HeatMap {
            height: 2,
            width: 2,
            data: vec![1.0, 0.9, 0.1, 0.0],
            subject: Subject::Word(0),
        };
        assert_eq!(map_intensity(&threshold(&map, 0.5)), 0.5);
        assert_eq!(map_intensity(&threshold(&map, 0.0)), 1.0);
        let zero = HeatMap {
            data: vec![0.0; 4],
            ..map
        };
        assert_eq!(map_intensity(&threshold(&zero, 0.4)), 0.0);
    }

    #[test]
    fn summary_examples() {
        let s = summarize(&[rec("NOUN", 0.1), rec("NOUN", 0.3)]);
        assert_eq!(s.groups.len(), 1);
        let g = &s.groups[0];
        assert!((g.mean - 0.2).abs() < 1e-15);
        assert!((g.median - 0.2).abs() < 1e-15);
        assert_eq!((g.min, g.max, g.count), (0.1, 0.3, 2));

        let s = summarize(&[rec("NOUN", 0.5), rec("DET", 0.1), rec("DET", 0.2)]);
        assert_eq!(s.groups.len(), 2);
        assert_eq!(s.group("DET").unwrap().count, 2);
        assert_eq!(s.group("NOUN").unwrap().mean, 0.5);
        assert!(summarize(&[]).groups.is_empty());
    }

    #[test]
    fn quantiles_interpolate() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&v, 0.25), 1.75);
        assert_eq!(quantile_sorted(&v, 0.5), 2.5);
        assert_eq!(quantile_sorted(&v, 0.75), 3.25);
        assert_eq!(quantile_sorted(&[7.0], 0.5), 7.0);
    }

    proptest! {
        #[test]
        fn summary_ignores_record_order(vals in prop::collection::vec((0u8..3, 0.0f64..1.0), 1..60), rot in 0usize..60) {
            let tags = ["ADJ", "NOUN", "PUNCT"];
            let recs: Vec<_> = vals.iter().map(|&(t, v)| rec(tags[t as usize], v)).collect();
            let mut shuffled = recs.clone();
            shuffled.reverse();
            let n = shuffled.len();
            shuffled.rotate_left(rot % n);
            prop_assert_eq!(summarize(&recs), summarize(&shuffled));
        }
    }
}
