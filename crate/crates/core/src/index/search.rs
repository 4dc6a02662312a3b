//! Exhaustive nearest-neighbour ranking over a [`FeatureStore`].

use std::cmp::Ordering;
use std::collections::HashSet;
use std::fmt;

use rayon::prelude::*;

use crate::corpus::Corpus;
use crate::distance::squared_euclidean;
use crate::error::{Error, Result};
use crate::geometry::{iou, AspectGate, BBox};
use crate::image::GrayImage;
use crate::siamese::{sigmoid, SiameseModel};

use super::store::FeatureStore;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SearchMode {
    /// One hit per document.
    Retrieval,
    /// One hit per (document, box).
    Spotting,
}

impl fmt::Display for SearchMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SearchMode::Retrieval => "retrieval",
            SearchMode::Spotting => "spotting",
        })
    }
}

impl std::str::FromStr for SearchMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "retrieval" => Ok(SearchMode::Retrieval),
            "spotting" => Ok(SearchMode::Spotting),
            _ => Err(Error::Param(format!("unknown mode {s:?}, expected retrieval or spotting"))),
        }
    }
}

/// Records to leave out of a ranking: those on `doc_id` overlapping `bbox`
/// with IoU at least `min_iou`.
#[derive(Debug, Clone, PartialEq)]
pub struct Exclusion {
    pub doc_id: String,
    pub bbox: BBox,
    pub min_iou: f64,
}

impl Exclusion {
    pub fn new(doc_id: impl Into<String>, bbox: BBox) -> Self {
        Self {
            doc_id: doc_id.into(),
            bbox,
            min_iou: 0.5,
        }
    }

    pub fn covers(&self, doc_id: &str, bbox: &BBox) -> bool {
        doc_id == self.doc_id && iou(bbox, &self.bbox) >= self.min_iou
    }
}

/// Everything about a query except its pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchOptions {
    /// Query extent, used only by the aspect gate.
    pub query_box: BBox,
    pub topk: usize,
    pub mode: SearchMode,
    pub gate: Option<AspectGate>,
    pub exclude: Option<Exclusion>,
}

impl SearchOptions {
    pub fn new(query_box: BBox, topk: usize, mode: SearchMode) -> Self {
        Self {
            query_box,
            topk,
            mode,
            gate: None,
            exclude: None,
        }
    }

    pub fn with_gate(mut self, gate: Option<AspectGate>) -> Self {
        self.gate = gate;
        self
    }

    pub fn excluding(mut self, exclude: Option<Exclusion>) -> Self {
        self.exclude = exclude;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.topk == 0 {
            return Err(Error::Param("topk must be at least 1".into()));
        }
        Ok(())
    }

    fn admits(&self, doc_id: &str, bbox: &BBox) -> bool {
        self.gate.map_or(true, |g| g.admits(&self.query_box, bbox))
            && !self.exclude.as_ref().is_some_and(|e| e.covers(doc_id, bbox))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryRequest {
    pub patch: GrayImage,
    pub options: SearchOptions,
}

impl QueryRequest {
    /// A request whose gate box is the patch extent.
    pub fn new(patch: GrayImage, topk: usize, mode: SearchMode) -> Self {
        let query_box = patch.bounds();
        Self {
            patch,
            options: SearchOptions::new(query_box, topk, mode),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedHit {
    /// 1-based.
    pub rank: usize,
    pub doc_id: String,
    pub bbox: BBox,
    pub distance: f64,
    /// Position of the record in the store.
    pub record: usize,
}

fn check_dim(store: &FeatureStore, dim: usize) -> Result<()> {
    if store.dim() != dim {
        return Err(Error::Config(format!(
            "store dim {} does not match model embedding dim {}",
            store.dim(),
            dim
        )));
    }
    Ok(())
}

/// Ranks the store against a precomputed query embedding.
pub fn search_embedding(store: &FeatureStore, query: &[f32], opts: &SearchOptions) -> Result<Vec<RankedHit>> {
    opts.validate()?;
    check_dim(store, query.len())?;
    let eligible = eligible_records(store, opts);
    let keys: Vec<f64> = eligible
        .par_iter()
        .map(|&i| squared_euclidean(query, store.feature(i)))
        .collect();
    Ok(finish(store, eligible, keys, opts))
}

/// Embeds the query patch once and ranks every stored candidate.
pub fn search(store: &FeatureStore, req: &QueryRequest, model: &SiameseModel) -> Result<Vec<RankedHit>> {
    req.options.validate()?;
    check_dim(store, model.embed_dim())?;
    let q = model.embed_any(&req.patch)?;
    search_embedding(store, &q, &req.options)
}

/// Scores every candidate by running both branches and the distance head on
/// the (query, candidate) pair, re-extracting the candidate from its page.
/// Stored features are not read.
pub fn search_via_pair_head(
    store: &FeatureStore,
    corpus: &Corpus,
    req: &QueryRequest,
    model: &SiameseModel,
) -> Result<Vec<RankedHit>> {
    req.options.validate()?;
    check_dim(store, model.embed_dim())?;
    let eligible = eligible_records(store, &req.options);
    let keys = eligible
        .par_iter()
        .map(|&i| {
            let page = corpus.image(store.doc_id(i))?;
            let cand = page.crop(&store.bbox(i))?;
            pair_forward(model, &req.patch, &cand)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(finish(store, eligible, keys, &req.options))
}

/// Squared embedding distance of one pair computed from scratch.
fn pair_forward(model: &SiameseModel, a: &GrayImage, b: &GrayImage) -> Result<f64> {
    let ea = model.embed_any(a)?;
    let eb = model.embed_any(b)?;
    let squared = squared_euclidean(&ea, &eb);
    // the head is monotone in distance and cannot reorder candidates, but it
    // is part of the per-pair cost
    std::hint::black_box(sigmoid(model.head().logit(squared.sqrt())));
    Ok(squared)
}

/// Records that survive the gate and the exclusion.
pub fn count_eligible(store: &FeatureStore, opts: &SearchOptions) -> usize {
    (0..store.len())
        .filter(|&i| opts.admits(store.doc_id(i), &store.bbox(i)))
        .count()
}

fn eligible_records(store: &FeatureStore, opts: &SearchOptions) -> Vec<usize> {
    (0..store.len())
        .filter(|&i| opts.admits(store.doc_id(i), &store.bbox(i)))
        .collect()
}

fn finish(store: &FeatureStore, eligible: Vec<usize>, keys: Vec<f64>, opts: &SearchOptions) -> Vec<RankedHit> {
    let mut order: Vec<(f64, usize)> = keys.into_iter().zip(eligible).collect();
    order.sort_unstable_by(|a, b| compare(store, a, b));

    let mut hits = Vec::with_capacity(opts.topk.min(order.len()));
    let mut seen_docs = HashSet::new();
    let mut seen_boxes = HashSet::new();
    for (key, i) in order {
        if hits.len() == opts.topk {
            break;
        }
        let doc = store.doc_id(i);
        let bbox = store.bbox(i);
        let fresh = match opts.mode {
            SearchMode::Retrieval => seen_docs.insert(doc),
            SearchMode::Spotting => seen_boxes.insert((doc, bbox)),
        };
        if fresh {
            hits.push(RankedHit {
                rank: hits.len() + 1,
                doc_id: doc.to_string(),
                bbox,
                distance: key.sqrt(),
                record: i,
            });
        }
    }
    hits
}

fn compare(store: &FeatureStore, a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    a.0.total_cmp(&b.0)
        .then_with(|| store.doc_id(a.1).cmp(store.doc_id(b.1)))
        .then(a.1.cmp(&b.1))
}
