//! Pair matching, average precision and split-aware mAP aggregates.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::error::{Error, Result};
use crate::geometry::{iou, BBox};
use crate::taxonomy::ZeroShotSplit;

pub const DEFAULT_IOU_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DetectionRecord {
    pub image: u64,
    pub human: BBox,
    pub object: BBox,
    pub hoi: usize,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GroundTruthRecord {
    pub image: u64,
    pub human: BBox,
    pub object: BBox,
    pub hoi: usize,
}

fn box_key(b: &BBox) -> [u64; 4] {
    b.as_array().map(f64::to_bits)
}

/// Ranking order: score descending; equal scores fall back to image id, HOI id
/// and box coordinates, so the ranking never depends on input order.
fn rank(a: &DetectionRecord, b: &DetectionRecord) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.image.cmp(&b.image))
        .then(a.hoi.cmp(&b.hoi))
        .then(box_key(&a.human).cmp(&box_key(&b.human)))
        .then(box_key(&a.object).cmp(&box_key(&b.object)))
}

/// Ranks `detections` and flags each as a true positive: it must overlap an
/// unmatched ground-truth pair of the same image and HOI with
/// `min(iou_h, iou_o) >= threshold`; among candidates the best overlap wins and
/// each ground-truth pair is matched at most once. Returns `(record index, tp)`
/// in ranked order.
pub fn match_pairs(detections: &[DetectionRecord], gt: &[GroundTruthRecord], threshold: f64) -> Vec<(usize, bool)> {
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&i, &j| rank(&detections[i], &detections[j]));
    let mut groups: BTreeMap<(u64, usize), Vec<usize>> = BTreeMap::new();
    for (i, g) in gt.iter().enumerate() {
        groups.entry((g.image, g.hoi)).or_default().push(i);
    }
    let mut used = vec![false; gt.len()];
    order
        .into_iter()
        .map(|i| {
            let d = &detections[i];
            let mut best: Option<(usize, f64)> = None;
            for &g in groups.get(&(d.image, d.hoi)).map_or(&[][..], |v| v.as_slice()) {
                if used[g] {
                    continue;
                }
                let overlap = iou(&d.human, &gt[g].human).min(iou(&d.object, &gt[g].object));
                if overlap >= threshold && best.is_none_or(|(_, o)| overlap > o) {
                    best = Some((g, overlap));
                }
            }
            if let Some((g, _)) = best {
                used[g] = true;
            }
            (i, best.is_some())
        })
        .collect()
}

/// Area under the precision envelope of ranked TP/FP flags. `None` when there is
/// no ground truth.
pub fn average_precision(flags: &[bool], num_gt: usize) -> Option<f64> {
    if num_gt == 0 {
        return None;
    }
    let mut tp = 0usize;
    let mut points = Vec::with_capacity(flags.len());
    for (k, &f) in flags.iter().enumerate() {
        if f {
            tp += 1;
        }
        points.push((tp as f64 / num_gt as f64, tp as f64 / (k + 1) as f64));
    }
    let mut ap = 0.0;
    let mut envelope = 0.0f64;
    let mut prev_recall = None;
    for &(recall, precision) in points.iter().rev() {
        if let Some(r) = prev_recall {
            ap += (r - recall) * envelope;
        }
        envelope = envelope.max(precision);
        prev_recall = Some(recall);
    }
    if let Some(r) = prev_recall {
        ap += r * envelope;
    }
    Some(ap.clamp(0.0, 1.0))
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MapReport {
    /// AP per category; `None` for categories without test ground truth.
    pub per_category: Vec<Option<f64>>,
    pub num_gt: Vec<usize>,
    pub full: Option<f64>,
    pub seen: Option<f64>,
    pub unseen: Option<f64>,
    pub rare: Option<f64>,
    pub nonrare: Option<f64>,
}

impl MapReport {
    /// Mean AP over the members of `set` that have ground truth.
    pub fn mean_over(&self, set: impl IntoIterator<Item = usize>) -> Option<f64> {
        let aps: Vec<f64> = set.into_iter().filter_map(|c| self.per_category.get(c).copied().flatten()).collect();
        if aps.is_empty() {
            None
        } else {
            Some(aps.iter().sum::<f64>() / aps.len() as f64)
        }
    }
}

/// Per-category AP over all images, then means over the full, seen, unseen,
/// rare and non-rare category sets.
pub fn map_report(
    detections: &[DetectionRecord],
    gt: &[GroundTruthRecord],
    split: &ZeroShotSplit,
    rare: &BTreeSet<usize>,
    threshold: f64,
) -> Result<MapReport> {
    let c = split.num_hois;
    if let Some(bad) = gt.iter().map(|g| g.hoi).chain(detections.iter().map(|d| d.hoi)).find(|&h| h >= c) {
        return Err(Error::MissingCategory(bad));
    }
    if detections.iter().any(|d| !d.score.is_finite()) {
        return Err(Error::Validation("detection scores must be finite".into()));
    }
    let mut det_by: Vec<Vec<DetectionRecord>> = vec![Vec::new(); c];
    for d in detections {
        det_by[d.hoi].push(*d);
    }
    let mut gt_by: Vec<Vec<GroundTruthRecord>> = vec![Vec::new(); c];
    for g in gt {
        gt_by[g.hoi].push(*g);
    }
    let per_category: Vec<Option<f64>> = (0..c)
        .map(|k| {
            let flags: Vec<bool> = match_pairs(&det_by[k], &gt_by[k], threshold).into_iter().map(|(_, f)| f).collect();
            average_precision(&flags, gt_by[k].len())
        })
        .collect();
    let mut report = MapReport {
        per_category,
        num_gt: gt_by.iter().map(Vec::len).collect(),
        full: None,
        seen: None,
        unseen: None,
        rare: None,
        nonrare: None,
    };
    report.full = report.mean_over(0..c);
    report.seen = report.mean_over(split.seen_hois.iter().copied());
    report.unseen = report.mean_over(split.unseen_hois.iter().copied());
    report.rare = report.mean_over(rare.iter().copied().filter(|&k| k < c));
    report.nonrare = report.mean_over((0..c).filter(|k| !rare.contains(k)));
    Ok(report)
}
