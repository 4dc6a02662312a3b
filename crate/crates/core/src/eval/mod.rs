//! Ground truth and the two evaluation protocols.
//!
//! Retrieval counts a hit relevant when its document holds another instance
//! of the query's category. Spotting also requires the hit box to overlap
//! that instance by at least an IoU threshold, each instance being credited
//! once. In both, the query's own instance is never a target and by default
//! its own candidates are left out of the ranking.

mod evaluate;
mod gt;
mod metrics;
mod query;
mod report;

pub use evaluate::{default_iou_grid, evaluate, EvalConfig, DEFAULT_TOPK};
pub use gt::{GroundTruth, GtEntry};
pub use metrics::{
    average_precision, recall_at_k, retrieval_relevance, retrieval_total, spotting_matches, spotting_relevance,
    spotting_total, targets,
};
pub use query::{queries_from_ground_truth, QuerySpec};
pub use report::{EvalReport, QueryOutcome};
