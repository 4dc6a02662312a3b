use std::fmt::Write as _;
use std::time::Duration;

use crate::index::SearchMode;

/// Scores of one query. `ap` and `recall` are laid out IoU-major: entry
/// `i * topk_count + j` belongs to the i-th threshold and j-th topk (a
/// single row of topk values in retrieval mode).
#[derive(Debug, Clone, PartialEq)]
pub struct QueryOutcome {
    pub query_id: String,
    pub category: String,
    /// Store records that passed the gate and exclusion.
    pub candidates: usize,
    pub total_relevant: usize,
    pub ap: Vec<f64>,
    pub recall: Vec<f64>,
    pub search_time: Duration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub mode: SearchMode,
    pub seed: u64,
    pub topk_set: Vec<usize>,
    /// Empty in retrieval mode.
    pub iou_grid: Vec<f64>,
    /// Sorted by query id.
    pub queries: Vec<QueryOutcome>,
    pub skipped: Vec<String>,
    pub elapsed: Duration,
}

impl EvalReport {
    /// IoU levels of the report; a single `None` in retrieval mode.
    pub fn levels(&self) -> Vec<Option<f64>> {
        if self.iou_grid.is_empty() {
            vec![None]
        } else {
            self.iou_grid.iter().copied().map(Some).collect()
        }
    }

    fn slot(&self, topk: usize, iou: Option<f64>) -> Option<usize> {
        let j = self.topk_set.iter().position(|&k| k == topk)?;
        let i = match iou {
            None if self.iou_grid.is_empty() => 0,
            None => return None,
            Some(t) => self.iou_grid.iter().position(|&g| (g - t).abs() < 1e-9)?,
        };
        Some(i * self.topk_set.len() + j)
    }

    fn mean_of(&self, topk: usize, iou: Option<f64>, pick: impl Fn(&QueryOutcome) -> &[f64]) -> Option<f64> {
        let s = self.slot(topk, iou)?;
        if self.queries.is_empty() {
            return Some(0.0);
        }
        Some(self.queries.iter().map(|q| pick(q)[s]).sum::<f64>() / self.queries.len() as f64)
    }

    /// Unweighted mean AP over evaluated queries; `None` if the report has
    /// no such (topk, iou) cell.
    pub fn mean_ap(&self, topk: usize, iou: Option<f64>) -> Option<f64> {
        self.mean_of(topk, iou, |q| &q.ap)
    }

    pub fn mean_recall(&self, topk: usize, iou: Option<f64>) -> Option<f64> {
        self.mean_of(topk, iou, |q| &q.recall)
    }

    pub fn query_ap(&self, query: &QueryOutcome, topk: usize, iou: Option<f64>) -> Option<f64> {
        self.slot(topk, iou).map(|s| query.ap[s])
    }

    /// `query_id<TAB>topk<TAB>iou<TAB>ap<TAB>recall` rows followed by one
    /// `mAP` row per (topk, iou) holding mAP and mean recall. The IoU column
    /// is `-` in retrieval mode.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("query_id\ttopk\tiou\tap\trecall\n");
        let iou_text = |l: Option<f64>| l.map_or("-".to_string(), |t| format!("{t:.1}"));
        for q in &self.queries {
            for (i, level) in self.levels().into_iter().enumerate() {
                for (j, k) in self.topk_set.iter().enumerate() {
                    let s = i * self.topk_set.len() + j;
                    let _ = writeln!(out, "{}\t{k}\t{}\t{:.6}\t{:.6}", q.query_id, iou_text(level), q.ap[s], q.recall[s]);
                }
            }
        }
        for level in self.levels() {
            for &k in &self.topk_set {
                let _ = writeln!(
                    out,
                    "mAP\t{k}\t{}\t{:.6}\t{:.6}",
                    iou_text(level),
                    self.mean_ap(k, level).unwrap_or(0.0),
                    self.mean_recall(k, level).unwrap_or(0.0)
                );
            }
        }
        out
    }

    /// Human-readable summary: mAP and mean recall per (IoU, topk).
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let mean_candidates = if self.queries.is_empty() {
            0.0
        } else {
            self.queries.iter().map(|q| q.candidates).sum::<usize>() as f64 / self.queries.len() as f64
        };
        let _ = writeln!(
            out,
            "mode {}  seed {}  queries {}  skipped {}  mean candidates/query {:.1}",
            self.mode,
            self.seed,
            self.queries.len(),
            self.skipped.len(),
            mean_candidates
        );
        for (title, recall) in [("mAP", false), ("mean recall", true)] {
            let _ = writeln!(out);
            let _ = write!(out, "{title:<12}");
            for k in &self.topk_set {
                let _ = write!(out, "{:>9}", format!("top-{k}"));
            }
            let _ = writeln!(out);
            for level in self.levels() {
                let label = level.map_or("all".to_string(), |t| format!("IoU {t:.1}"));
                let _ = write!(out, "{label:<12}");
                for &k in &self.topk_set {
                    let v = if recall { self.mean_recall(k, level) } else { self.mean_ap(k, level) };
                    let _ = write!(out, "{:>9.4}", v.unwrap_or(0.0));
                }
                let _ = writeln!(out);
            }
        }
        out
    }
}
