use std::collections::BTreeMap;
use std::time::Instant;

use rayon::prelude::*;

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::geometry::AspectGate;
use crate::index::{count_eligible, search, Exclusion, FeatureStore, QueryRequest, SearchMode, SearchOptions};
use crate::siamese::SiameseModel;

use super::gt::GroundTruth;
use super::metrics::{
    average_precision, recall_at_k, retrieval_relevance, retrieval_total, spotting_matches, spotting_total,
};
use super::query::QuerySpec;
use super::report::{EvalReport, QueryOutcome};

pub const DEFAULT_TOPK: [usize; 5] = [5, 10, 25, 50, 100];

/// 0.1, 0.2, ..., 0.7.
pub fn default_iou_grid() -> Vec<f64> {
    (1..=7).map(|i| i as f64 / 10.0).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub topk_set: Vec<usize>,
    /// Spotting thresholds; ignored in retrieval mode.
    pub iou_grid: Vec<f64>,
    pub mode: SearchMode,
    pub gate: Option<AspectGate>,
    /// Leave candidates covering the query's own instance out of its ranking.
    pub exclude_source: bool,
    /// Recorded in the report.
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            topk_set: DEFAULT_TOPK.to_vec(),
            iou_grid: default_iou_grid(),
            mode: SearchMode::Retrieval,
            gate: Some(AspectGate::default()),
            exclude_source: true,
            seed: 0,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.topk_set.is_empty() || self.topk_set.contains(&0) {
            return Err(Error::Param("topk values must be at least 1".into()));
        }
        if self.mode == SearchMode::Spotting {
            if self.iou_grid.is_empty() {
                return Err(Error::Param("spotting needs at least one IoU threshold".into()));
            }
            if let Some(t) = self.iou_grid.iter().find(|t| !(**t > 0.0 && **t <= 1.0)) {
                return Err(Error::Param(format!("IoU threshold {t} outside (0, 1]")));
            }
        }
        Ok(())
    }

    fn sorted_topk(&self) -> Vec<usize> {
        let mut v = self.topk_set.clone();
        v.sort_unstable();
        v.dedup();
        v
    }

    fn sorted_grid(&self) -> Vec<f64> {
        if self.mode == SearchMode::Retrieval {
            return Vec::new();
        }
        let mut v = self.iou_grid.clone();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    }
}

/// Runs every query against the store and scores the ranked lists.
/// Queries whose category occurs fewer than twice are skipped with a
/// warning.
pub fn evaluate(
    store: &FeatureStore,
    model: &SiameseModel,
    corpus: &Corpus,
    gt: &GroundTruth,
    queries: &[QuerySpec],
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    cfg.validate()?;
    if store.dim() != model.embed_dim() {
        return Err(Error::Config(format!(
            "store dim {} does not match model embedding dim {}",
            store.dim(),
            model.embed_dim()
        )));
    }
    let start = Instant::now();
    let topk_set = cfg.sorted_topk();
    let iou_grid = cfg.sorted_grid();
    let counts: BTreeMap<&str, usize> = gt.category_counts();

    let mut ordered: Vec<&QuerySpec> = queries.iter().collect();
    ordered.sort_by(|a, b| a.query_id.cmp(&b.query_id));
    let mut skipped = Vec::new();
    let mut runnable = Vec::new();
    for q in ordered {
        let n = counts.get(q.category.as_str()).copied().unwrap_or(0);
        if n < 2 {
            log::warn!("skipping query {}: category {} occurs {n} time(s)", q.query_id, q.category);
            skipped.push(q.query_id.clone());
        } else {
            runnable.push(q);
        }
    }

    let outcomes = runnable
        .par_iter()
        .map(|q| run_query(store, model, corpus, gt, q, cfg, &topk_set, &iou_grid))
        .collect::<Result<Vec<_>>>()?;

    Ok(EvalReport {
        mode: cfg.mode,
        seed: cfg.seed,
        topk_set,
        iou_grid,
        queries: outcomes,
        skipped,
        elapsed: start.elapsed(),
    })
}

#[allow(clippy::too_many_arguments)]
fn run_query(
    store: &FeatureStore,
    model: &SiameseModel,
    corpus: &Corpus,
    gt: &GroundTruth,
    q: &QuerySpec,
    cfg: &EvalConfig,
    topk_set: &[usize],
    iou_grid: &[f64],
) -> Result<QueryOutcome> {
    let patch = corpus.image(&q.doc_id)?.crop(&q.bbox)?;
    let max_k = *topk_set.last().expect("validated");
    let exclude = cfg.exclude_source.then(|| Exclusion::new(q.doc_id.clone(), q.bbox));
    let options = SearchOptions::new(q.bbox, max_k, cfg.mode)
        .with_gate(cfg.gate)
        .excluding(exclude);
    let candidates = count_eligible(store, &options);
    let t = Instant::now();
    let hits = search(store, &QueryRequest { patch, options }, model)?;
    let search_time = t.elapsed();

    let score = |relevance: &[bool], total: usize| -> (Vec<f64>, Vec<f64>) {
        topk_set
            .iter()
            .map(|&k| {
                let prefix = &relevance[..k.min(relevance.len())];
                // a list shorter than k still counts k slots
                let mut padded = prefix.to_vec();
                padded.resize(k, false);
                (average_precision(&padded, total), recall_at_k(prefix, total))
            })
            .unzip()
    };

    let (ap, recall, total) = match cfg.mode {
        SearchMode::Retrieval => {
            let rel: Vec<bool> = hits.iter().map(|h| retrieval_relevance(h, q, gt)).collect();
            let total = retrieval_total(q, gt);
            let (ap, recall) = score(&rel, total);
            (ap, recall, total)
        }
        SearchMode::Spotting => {
            let total = spotting_total(q, gt);
            let mut ap = Vec::new();
            let mut recall = Vec::new();
            for &t in iou_grid {
                let rel = spotting_matches(&hits, q, gt, t);
                let (a, r) = score(&rel, total);
                ap.extend(a);
                recall.extend(r);
            }
            (ap, recall, total)
        }
    };
    Ok(QueryOutcome {
        query_id: q.query_id.clone(),
        category: q.category.clone(),
        candidates,
        total_relevant: total,
        ap,
        recall,
        search_time,
    })
}
