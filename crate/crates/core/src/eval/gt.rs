use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::proposals::parse_bbox_fields;
use crate::siamese::LabeledPatch;

/// One labelled pattern instance.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GtEntry {
    pub doc_id: String,
    pub category: String,
    pub bbox: BBox,
}

impl GtEntry {
    pub fn new(doc_id: impl Into<String>, category: impl Into<String>, bbox: BBox) -> Self {
        Self {
            doc_id: doc_id.into(),
            category: category.into(),
            bbox,
        }
    }
}

/// Labelled instances; each (doc_id, bbox) appears once.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GroundTruth {
    entries: Vec<GtEntry>,
}

impl GroundTruth {
    pub fn new(entries: Vec<GtEntry>) -> Result<Self> {
        let mut seen = HashSet::new();
        for e in &entries {
            if e.category.is_empty() || e.category.contains(char::is_whitespace) {
                return Err(Error::Input(format!("bad category {:?} on {}", e.category, e.doc_id)));
            }
            if e.doc_id.is_empty() {
                return Err(Error::Input("empty doc_id".into()));
            }
            if !seen.insert((e.doc_id.as_str(), e.bbox)) {
                return Err(Error::Input(format!("duplicate entry {} {}", e.doc_id, e.bbox)));
            }
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[GtEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Occurrence count per category.
    pub fn category_counts(&self) -> BTreeMap<&str, usize> {
        let mut out = BTreeMap::new();
        for e in &self.entries {
            *out.entry(e.category.as_str()).or_insert(0) += 1;
        }
        out
    }

    pub fn on_doc<'a>(&'a self, doc_id: &'a str) -> impl Iterator<Item = &'a GtEntry> + 'a {
        self.entries.iter().filter(move |e| e.doc_id == doc_id)
    }

    /// Parses `doc_id<TAB>category<TAB>x<TAB>y<TAB>w<TAB>h` lines. Blank lines
    /// and lines starting with `#` are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 6 {
                return Err(Error::Format(format!(
                    "ground truth line {}: expected 6 tab-separated fields, got {}",
                    n + 1,
                    fields.len()
                )));
            }
            let bbox = parse_bbox_fields(&fields[2..])
                .map_err(|e| Error::Format(format!("ground truth line {}: {e}", n + 1)))?;
            entries.push(GtEntry::new(fields[0], fields[1], bbox));
        }
        Self::new(entries).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            let b = e.bbox;
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\n",
                e.doc_id,
                e.category,
                b.x(),
                b.y(),
                b.w(),
                b.h()
            ));
        }
        out
    }

    /// Crop of every entry resampled to `width` x `height`, labelled by the
    /// index of its category in the returned sorted category list.
    pub fn labeled_crops(&self, corpus: &Corpus, width: u32, height: u32) -> Result<(Vec<LabeledPatch>, Vec<String>)> {
        let names: Vec<String> = self.category_counts().keys().map(|c| c.to_string()).collect();
        let patches = self
            .entries
            .iter()
            .map(|e| {
                let class = names.binary_search(&e.category).expect("category listed") as u32;
                let patch = corpus.image(&e.doc_id)?.crop(&e.bbox)?.resize_bilinear(width, height)?;
                Ok(LabeledPatch { class, patch })
            })
            .collect::<Result<_>>()?;
        Ok((patches, names))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }
}
