use std::collections::BTreeSet;

use crate::geometry::iou;
use crate::index::RankedHit;

use super::gt::{GroundTruth, GtEntry};
use super::query::QuerySpec;

fn is_source(e: &GtEntry, q: &QuerySpec) -> bool {
    e.doc_id == q.doc_id && e.bbox == q.bbox
}

/// Ground-truth instances a query should find: its category, minus the
/// query's own instance.
pub fn targets<'a>(q: &'a QuerySpec, gt: &'a GroundTruth) -> impl Iterator<Item = &'a GtEntry> + 'a {
    gt.entries()
        .iter()
        .filter(move |e| e.category == q.category && !is_source(e, q))
}

/// Whether the hit's document holds an instance of the query's category
/// other than the query itself.
pub fn retrieval_relevance(hit: &RankedHit, q: &QuerySpec, gt: &GroundTruth) -> bool {
    targets(q, gt).any(|e| e.doc_id == hit.doc_id)
}

/// Whether the hit overlaps some target instance on its document with IoU
/// at least `iou_thresh`.
pub fn spotting_relevance(hit: &RankedHit, q: &QuerySpec, gt: &GroundTruth, iou_thresh: f64) -> bool {
    targets(q, gt).any(|e| e.doc_id == hit.doc_id && iou(&hit.bbox, &e.bbox) >= iou_thresh)
}

/// Number of distinct documents holding a target.
pub fn retrieval_total(q: &QuerySpec, gt: &GroundTruth) -> usize {
    targets(q, gt).map(|e| e.doc_id.as_str()).collect::<BTreeSet<_>>().len()
}

pub fn spotting_total(q: &QuerySpec, gt: &GroundTruth) -> usize {
    targets(q, gt).count()
}

/// Spotting relevance with each target credited at most once. A hit is
/// matched to its best-overlapping target (first in ground-truth order on
/// ties); it counts only if that overlap reaches `iou_thresh` and no
/// earlier hit already took the same target. Without the one-to-one rule,
/// several boxes around one instance would all count and AP could exceed 1.
pub fn spotting_matches(hits: &[RankedHit], q: &QuerySpec, gt: &GroundTruth, iou_thresh: f64) -> Vec<bool> {
    let targets: Vec<&GtEntry> = targets(q, gt).collect();
    let mut taken = vec![false; targets.len()];
    hits.iter()
        .map(|h| {
            let mut best: Option<(usize, f64)> = None;
            for (i, t) in targets.iter().enumerate() {
                if t.doc_id != h.doc_id {
                    continue;
                }
                let v = iou(&h.bbox, &t.bbox);
                if best.map_or(true, |(_, b)| v > b) {
                    best = Some((i, v));
                }
            }
            match best {
                Some((i, v)) if v >= iou_thresh && !taken[i] => {
                    taken[i] = true;
                    true
                }
                _ => false,
            }
        })
        .collect()
}

/// Mean of precision at each relevant rank, over `min(total_relevant, k)`
/// where `k` is the list length. Zero when nothing is relevant.
pub fn average_precision(relevance: &[bool], total_relevant: usize) -> f64 {
    let denom = total_relevant.min(relevance.len());
    if denom == 0 {
        return 0.0;
    }
    let mut found = 0usize;
    let mut sum = 0.0;
    for (i, &rel) in relevance.iter().enumerate() {
        if rel {
            found += 1;
            sum += found as f64 / (i + 1) as f64;
        }
    }
    sum / denom as f64
}

pub fn recall_at_k(relevance: &[bool], total_relevant: usize) -> f64 {
    if total_relevant == 0 {
        return 0.0;
    }
    relevance.iter().filter(|&&r| r).count() as f64 / total_relevant as f64
}
