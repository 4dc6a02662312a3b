//! Offline candidate generation.
//!
//! A page is binarized with a local-mean threshold, smoothed, over-segmented at each
//! configured scale, and the segments are grouped bottom-up by color,
//! texture, size and fill similarity. Every region of every hierarchy is a
//! candidate box. The ink mask only decides which regions are worth
//! emitting: regions without a single ink pixel are dropped, except for the
//! hierarchy root.

mod grouping;
mod segment;
mod threshold;

use std::collections::HashSet;
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read};

use crate::error::{Error, Result};
use crate::geometry::{AspectGate, BBox};
use crate::image::GrayImage;

pub use grouping::{region_similarity, Region, SimilarityWeights, COLOR_BINS, TEXTURE_BINS};
pub use segment::{segment, Segmentation};
pub use threshold::{adaptive_threshold, BinaryMask};

use segment::{median3, segment_values};

#[derive(Debug, Clone, PartialEq)]
pub struct ProposalParams {
    /// Side of the adaptive-threshold neighbourhood; odd.
    pub block: u32,
    /// Threshold offset as a fraction of the 8-bit range.
    pub offset: f64,
    /// Segmentation scales, processed in order.
    pub scales: Vec<f64>,
    pub min_region_px: u64,
    pub max_proposals: usize,
    pub similarity_weights: SimilarityWeights,
}

impl Default for ProposalParams {
    fn default() -> Self {
        Self {
            block: 241,
            offset: 0.12,
            scales: vec![50.0, 100.0],
            min_region_px: 16,
            max_proposals: 5000,
            similarity_weights: SimilarityWeights::default(),
        }
    }
}

impl ProposalParams {
    pub fn validate(&self) -> Result<()> {
        if self.block < 3 || self.block % 2 == 0 {
            return Err(Error::Param(format!("block must be odd and >= 3, got {}", self.block)));
        }
        if !(0.0..1.0).contains(&self.offset) {
            return Err(Error::Param(format!("offset must lie in [0, 1), got {}", self.offset)));
        }
        if self.scales.is_empty() || self.scales.iter().any(|k| !(*k > 0.0) || !k.is_finite()) {
            return Err(Error::Param(format!("scales must be positive, got {:?}", self.scales)));
        }
        let w = self.similarity_weights.as_array();
        if w.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) || !w.iter().any(|v| *v > 0.0) {
            return Err(Error::Param(format!(
                "similarity weights must be non-negative with one positive, got {w:?}"
            )));
        }
        Ok(())
    }
}

/// A proposed region of a document, optionally carrying its embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub doc_id: String,
    pub bbox: BBox,
    pub feature: Option<Vec<f32>>,
}

impl Candidate {
    pub fn new(doc_id: impl Into<String>, bbox: BBox) -> Self {
        Self {
            doc_id: doc_id.into(),
            bbox,
            feature: None,
        }
    }
}

/// Candidate boxes for one page, in emission order.
pub fn propose(doc_id: &str, img: &GrayImage, params: &ProposalParams) -> Result<Vec<Candidate>> {
    params.validate()?;
    let mask = adaptive_threshold(img, params.block, params.offset)?;
    let field = grouping::OrientationField::new(img);
    let smoothed = median3(img);
    let img_area = img.width() as u64 * img.height() as u64;

    let mut seen = HashSet::new();
    let mut out = Vec::new();
    'scales: for &k in &params.scales {
        let seg = segment_values(img.width(), img.height(), &smoothed, k);
        let (regions, adjacency) = grouping::build_regions(img, &seg, &mask, &field);
        let hierarchy = grouping::hierarchical_grouping(
            regions,
            adjacency,
            &params.similarity_weights,
            img_area,
        );
        let root = hierarchy.len() - 1;
        for (i, region) in hierarchy.iter().enumerate() {
            if region.ink == 0 && i != root {
                continue;
            }
            if region.size < params.min_region_px {
                continue;
            }
            if !seen.insert(region.bbox) {
                continue;
            }
            out.push(Candidate::new(doc_id, region.bbox));
            if out.len() == params.max_proposals {
                break 'scales;
            }
        }
    }
    Ok(out)
}

/// Order-preserving subsequence of `cands` admitted by the aspect gate.
pub fn filter_candidates(cands: &[Candidate], query_box: &BBox, gate: &AspectGate) -> Vec<Candidate> {
    cands
        .iter()
        .filter(|c| gate.admits(query_box, &c.bbox))
        .cloned()
        .collect()
}

/// `doc_id<TAB>x<TAB>y<TAB>w<TAB>h` per line.
pub fn write_proposal_dump(cands: &[Candidate]) -> String {
    let mut s = String::new();
    for c in cands {
        let b = c.bbox;
        let _ = writeln!(s, "{}\t{}\t{}\t{}\t{}", c.doc_id, b.x(), b.y(), b.w(), b.h());
    }
    s
}

pub fn read_proposal_dump(reader: impl Read) -> Result<Vec<Candidate>> {
    let mut out = Vec::new();
    for (lineno, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let (doc, bbox) = parse_box_line(&line)
            .map_err(|e| Error::Format(format!("line {}: {e}", lineno + 1)))?;
        out.push(Candidate::new(doc, bbox));
    }
    Ok(out)
}

/// Parses `doc_id<TAB>x<TAB>y<TAB>w<TAB>h`.
pub(crate) fn parse_box_line(line: &str) -> Result<(String, BBox)> {
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != 5 {
        return Err(Error::Format(format!("expected 5 tab-separated fields, got {}", fields.len())));
    }
    let doc = fields[0];
    if doc.is_empty() {
        return Err(Error::format("empty doc_id"));
    }
    Ok((doc.to_string(), parse_bbox_fields(&fields[1..])?))
}

pub(crate) fn parse_bbox_fields(fields: &[&str]) -> Result<BBox> {
    let mut v = [0u32; 4];
    for (slot, f) in v.iter_mut().zip(fields) {
        *slot = f
            .trim()
            .parse()
            .map_err(|_| Error::Format(format!("bad box coordinate {f:?}")))?;
    }
    BBox::new(v[0], v[1], v[2], v[3]).map_err(|e| Error::Format(e.to_string()))
}
