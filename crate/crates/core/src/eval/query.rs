use crate::geometry::BBox;

use super::gt::GroundTruth;

/// A query: the crop of one ground-truth instance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuerySpec {
    pub query_id: String,
    pub category: String,
    pub doc_id: String,
    pub bbox: BBox,
}

impl QuerySpec {
    pub fn new(query_id: impl Into<String>, category: impl Into<String>, doc_id: impl Into<String>, bbox: BBox) -> Self {
        Self {
            query_id: query_id.into(),
            category: category.into(),
            doc_id: doc_id.into(),
            bbox,
        }
    }
}

/// One query per ground-truth entry, ids `q0000`, `q0001`, ... in entry
/// order.
pub fn queries_from_ground_truth(gt: &GroundTruth) -> Vec<QuerySpec> {
    let digits = gt.len().saturating_sub(1).to_string().len().max(4);
    gt.entries()
        .iter()
        .enumerate()
        .map(|(i, e)| QuerySpec::new(format!("q{i:0digits$}"), e.category.clone(), e.doc_id.clone(), e.bbox))
        .collect()
}
