use std::path::Path;

use rayon::prelude::*;

use crate::corpus::{list_pages, Document};
use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::image::GrayImage;
use crate::proposals::{propose, ProposalParams};
use crate::siamese::SiameseModel;

use super::store::FeatureStore;

#[derive(Debug)]
pub struct IndexOutcome {
    pub store: FeatureStore,
    /// Documents that could not be indexed, with the reason.
    pub failures: Vec<(String, Error)>,
}

type DocRecords = Vec<(BBox, Vec<f32>)>;

fn index_page(doc_id: &str, img: &GrayImage, params: &ProposalParams, model: &SiameseModel) -> Result<DocRecords> {
    propose(doc_id, img, params)?
        .into_iter()
        .map(|c| {
            let patch = img.crop(&c.bbox)?;
            Ok((c.bbox, model.embed_any(&patch)?))
        })
        .collect()
}

fn assemble(dim: usize, mut per_doc: Vec<(String, Result<DocRecords>)>) -> Result<IndexOutcome> {
    per_doc.sort_by(|a, b| a.0.cmp(&b.0));
    let mut store = FeatureStore::new(dim);
    let mut failures = Vec::new();
    for (doc_id, res) in per_doc {
        match res {
            Ok(records) => {
                for (bbox, f) in records {
                    store.push(doc_id.as_str(), bbox, &f)?;
                }
            }
            Err(e) => {
                log::warn!("skipping {doc_id}: {e}");
                failures.push((doc_id, e));
            }
        }
    }
    if store.is_empty() {
        return Err(Error::Corpus("no candidates were indexed".into()));
    }
    Ok(IndexOutcome { store, failures })
}

/// Proposes candidates on every page and embeds each one once. Records are
/// ordered by doc_id, then by proposal emission order, whatever the number
/// of worker threads.
pub fn index_corpus(docs: &[Document], params: &ProposalParams, model: &SiameseModel) -> Result<IndexOutcome> {
    params.validate()?;
    if docs.is_empty() {
        return Err(Error::Corpus("no documents to index".into()));
    }
    let per_doc = docs
        .par_iter()
        .map(|d| (d.doc_id.clone(), index_page(&d.doc_id, &d.image, params, model)))
        .collect();
    assemble(model.embed_dim(), per_doc)
}

/// [`index_corpus`] over the pages of a directory, loading each page on the
/// worker that indexes it. Unreadable pages become failures.
pub fn index_dir(dir: impl AsRef<Path>, params: &ProposalParams, model: &SiameseModel) -> Result<IndexOutcome> {
    params.validate()?;
    let pages = list_pages(dir)?;
    if pages.is_empty() {
        return Err(Error::Corpus("no .pgm pages found".into()));
    }
    let per_doc = pages
        .par_iter()
        .map(|(doc_id, path)| {
            let res = GrayImage::load_pgm(path).and_then(|img| index_page(doc_id, &img, params, model));
            (doc_id.clone(), res)
        })
        .collect();
    assemble(model.embed_dim(), per_doc)
}
