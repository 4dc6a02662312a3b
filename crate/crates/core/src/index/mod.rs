//! Offline feature store and the online exhaustive search over it.

mod bench;
mod build;
mod search;
mod store;

pub use bench::{bench_paths, bench_throughput, distance_throughput, PathBench, ThroughputRow};
pub use build::{index_corpus, index_dir, IndexOutcome};
pub use search::{
    count_eligible, search, search_embedding, search_via_pair_head, Exclusion, QueryRequest, RankedHit, SearchMode, SearchOptions,
};
pub use store::{import_feature_files, import_features, FeatureStore, Record};
