//! A set of page images keyed by document id.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::image::GrayImage;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub doc_id: String,
    pub image: GrayImage,
}

impl Document {
    pub fn new(doc_id: impl Into<String>, image: GrayImage) -> Self {
        Self { doc_id: doc_id.into(), image }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Corpus {
    docs: Vec<Document>,
    by_id: HashMap<String, usize>,
}

impl Corpus {
    pub fn new(docs: Vec<Document>) -> Result<Self> {
        let mut by_id = HashMap::with_capacity(docs.len());
        for (i, d) in docs.iter().enumerate() {
            if by_id.insert(d.doc_id.clone(), i).is_some() {
                return Err(Error::Corpus(format!("duplicate doc_id {}", d.doc_id)));
            }
        }
        Ok(Self { docs, by_id })
    }

    pub fn docs(&self) -> &[Document] {
        &self.docs
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn get(&self, doc_id: &str) -> Option<&GrayImage> {
        self.by_id.get(doc_id).map(|&i| &self.docs[i].image)
    }

    pub fn image(&self, doc_id: &str) -> Result<&GrayImage> {
        self.get(doc_id)
            .ok_or_else(|| Error::Corpus(format!("unknown doc_id {doc_id}")))
    }

    /// Loads every readable page of `dir`; unreadable pages are returned
    /// next to the corpus with their error.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<(Corpus, Vec<(String, Error)>)> {
        let mut docs = Vec::new();
        let mut failures = Vec::new();
        for (doc_id, path) in list_pages(dir)? {
            match GrayImage::load_pgm(&path) {
                Ok(image) => docs.push(Document { doc_id, image }),
                Err(e) => failures.push((doc_id, e)),
            }
        }
        Ok((Corpus::new(docs)?, failures))
    }
}

/// `(doc_id, path)` of every `*.pgm` file in `dir`, sorted by file name.
/// The doc_id is the file stem.
pub fn list_pages(dir: impl AsRef<Path>) -> Result<Vec<(String, PathBuf)>> {
    let dir = dir.as_ref();
    let mut out = Vec::new();
    for entry in fs::read_dir(dir)
        .map_err(|e| Error::Corpus(format!("cannot read corpus dir {}: {e}", dir.display())))?
    {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("pgm") {
            continue;
        }
        let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else {
            continue;
        };
        out.push((stem.to_string(), path));
    }
    out.sort();
    Ok(out)
}
