//! Timing harnesses. Hit lists are deterministic, timings are not.

use std::hint::black_box;
use std::time::{Duration, Instant};

use crate::corpus::Corpus;
use crate::distance::squared_euclidean;
use crate::error::Result;
use crate::siamese::SiameseModel;

use super::search::{search, search_via_pair_head, QueryRequest, RankedHit};
use super::store::FeatureStore;

/// Candidates scored per second by a single-threaded scan of every stored
/// feature against `query`; the best of `repeats` scans.
pub fn distance_throughput(store: &FeatureStore, query: &[f32], repeats: usize) -> f64 {
    assert_eq!(query.len(), store.dim(), "query dim");
    let dim = store.dim().max(1);
    let mut best = Duration::MAX;
    for _ in 0..repeats.max(1) {
        let start = Instant::now();
        let mut acc = 0.0;
        for f in store.features().chunks_exact(dim) {
            acc += squared_euclidean(black_box(query), f);
        }
        black_box(acc);
        best = best.min(start.elapsed());
    }
    store.len() as f64 / best.as_secs_f64().max(1e-9)
}

#[derive(Debug, Clone)]
pub struct PathBench {
    /// Re-embedding every stored candidate once (the offline cost).
    pub extract: Duration,
    /// Answering all queries from stored features.
    pub search: Duration,
    /// Answering all queries with the two-branch network per pair.
    pub pair_head: Duration,
    pub queries: usize,
    pub candidates: usize,
    /// Whether both paths returned the same hits for every query.
    pub identical: bool,
}

impl PathBench {
    /// Offline extraction plus all queries.
    pub fn extract_once(&self) -> Duration {
        self.extract + self.search
    }
}

/// Runs every request through both search paths. The extract-once total
/// is charged the full cost of embedding the candidates.
pub fn bench_paths(
    store: &FeatureStore,
    corpus: &Corpus,
    model: &SiameseModel,
    requests: &[QueryRequest],
) -> Result<PathBench> {
    let start = Instant::now();
    for i in 0..store.len() {
        let patch = corpus.image(store.doc_id(i))?.crop(&store.bbox(i))?;
        black_box(model.embed_any(&patch)?);
    }
    let extract = start.elapsed();

    let start = Instant::now();
    let fast = requests
        .iter()
        .map(|r| search(store, r, model))
        .collect::<Result<Vec<_>>>()?;
    let search_time = start.elapsed();

    let start = Instant::now();
    let slow = requests
        .iter()
        .map(|r| search_via_pair_head(store, corpus, r, model))
        .collect::<Result<Vec<_>>>()?;
    let pair_head = start.elapsed();

    Ok(PathBench {
        extract,
        search: search_time,
        pair_head,
        queries: requests.len(),
        candidates: store.len(),
        identical: fast == slow,
    })
}

#[derive(Debug, Clone)]
pub struct ThroughputRow {
    pub dim: usize,
    pub records: usize,
    pub candidates_per_sec: f64,
    pub mean_query: Duration,
    pub hits: Vec<Vec<RankedHit>>,
}

/// One row per (store, model) pair: raw distance throughput and mean
/// end-to-end query latency.
pub fn bench_throughput(
    configs: &[(&FeatureStore, &SiameseModel)],
    requests: &[QueryRequest],
    repeats: usize,
) -> Result<Vec<ThroughputRow>> {
    configs
        .iter()
        .map(|&(store, model)| {
            let probe = match requests.first() {
                Some(r) => model.embed_any(&r.patch)?,
                None => vec![0.0; store.dim()],
            };
            let candidates_per_sec = distance_throughput(store, &probe, repeats);
            let start = Instant::now();
            let hits = requests
                .iter()
                .map(|r| search(store, r, model))
                .collect::<Result<Vec<_>>>()?;
            let mean_query = start.elapsed() / requests.len().max(1) as u32;
            Ok(ThroughputRow {
                dim: store.dim(),
                records: store.len(),
                candidates_per_sec,
                mean_query,
                hits,
            })
        })
        .collect()
}
