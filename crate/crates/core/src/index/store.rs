//! Persisted per-candidate feature vectors.
//!
//! File layout, little-endian:
//!
//! ```text
//! "SPOT" | version u16 = 1 | dim u32 | count u64
//! count x { doc_id len u16 | doc_id UTF-8 | x u32 | y u32 | w u32 | h u32 | dim x f32 }
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::proposals::parse_box_line;

const MAGIC: &[u8; 4] = b"SPOT";
const VERSION: u16 = 1;

/// Borrowed view of one stored candidate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Record<'a> {
    pub doc_id: &'a str,
    pub bbox: BBox,
    pub feature: &'a [f32],
}

/// Fixed-dimension feature vectors in insertion order.
#[derive(Debug, Clone, Default)]
pub struct FeatureStore {
    dim: usize,
    doc_ids: Vec<String>,
    bboxes: Vec<BBox>,
    features: Vec<f32>,
}

impl PartialEq for FeatureStore {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim
            && self.doc_ids == other.doc_ids
            && self.bboxes == other.bboxes
            && self.features.len() == other.features.len()
            && self.features.iter().zip(&other.features).all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

impl FeatureStore {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            ..Self::default()
        }
    }

    pub fn with_capacity(dim: usize, records: usize) -> Self {
        Self {
            dim,
            doc_ids: Vec::with_capacity(records),
            bboxes: Vec::with_capacity(records),
            features: Vec::with_capacity(records * dim),
        }
    }

    pub fn push(&mut self, doc_id: impl Into<String>, bbox: BBox, feature: &[f32]) -> Result<()> {
        if feature.len() != self.dim {
            return Err(Error::Input(format!(
                "feature has {} values, store dim is {}",
                feature.len(),
                self.dim
            )));
        }
        let doc_id = doc_id.into();
        if doc_id.len() > u16::MAX as usize {
            return Err(Error::Input("doc_id longer than 65535 bytes".into()));
        }
        self.doc_ids.push(doc_id);
        self.bboxes.push(bbox);
        self.features.extend_from_slice(feature);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.bboxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bboxes.is_empty()
    }

    pub fn doc_id(&self, i: usize) -> &str {
        &self.doc_ids[i]
    }

    pub fn bbox(&self, i: usize) -> BBox {
        self.bboxes[i]
    }

    #[inline]
    pub fn feature(&self, i: usize) -> &[f32] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    /// All features back to back, record-major.
    pub fn features(&self) -> &[f32] {
        &self.features
    }

    pub fn record(&self, i: usize) -> Record<'_> {
        Record {
            doc_id: &self.doc_ids[i],
            bbox: self.bboxes[i],
            feature: self.feature(i),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = Record<'_>> + '_ {
        (0..self.len()).map(|i| self.record(i))
    }

    /// Records admitted by `keep`, in order.
    pub fn filtered(&self, mut keep: impl FnMut(Record<'_>) -> bool) -> FeatureStore {
        let mut out = FeatureStore::new(self.dim);
        for r in self.iter() {
            if keep(r) {
                out.push(r.doc_id, r.bbox, r.feature).expect("same dim");
            }
        }
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(18 + self.len() * (26 + 4 * self.dim));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.len() as u64).to_le_bytes());
        for r in self.iter() {
            out.extend_from_slice(&(r.doc_id.len() as u16).to_le_bytes());
            out.extend_from_slice(r.doc_id.as_bytes());
            for v in [r.bbox.x(), r.bbox.y(), r.bbox.w(), r.bbox.h()] {
                out.extend_from_slice(&v.to_le_bytes());
            }
            for f in r.feature {
                out.extend_from_slice(&f.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0usize;
        let mut take = |n: usize| -> Result<&[u8]> {
            if bytes.len() - pos < n {
                return Err(Error::format("store file truncated"));
            }
            let s = &bytes[pos..pos + n];
            pos += n;
            Ok(s)
        };
        if take(4)? != MAGIC {
            return Err(Error::format("bad store magic"));
        }
        let version = u16::from_le_bytes(take(2)?.try_into().unwrap());
        if version != VERSION {
            return Err(Error::Format(format!("unsupported store version {version}")));
        }
        let dim = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let count = u64::from_le_bytes(take(8)?.try_into().unwrap());
        // each record needs at least 18 + 4 dim bytes; reject absurd counts
        // before allocating for them
        let min_record = 18 + 4 * dim as u64;
        if count.saturating_mul(min_record) > (bytes.len() - 18) as u64 {
            return Err(Error::Format(format!("store declares {count} records but is too short")));
        }
        let mut store = FeatureStore::with_capacity(dim, count as usize);
        let mut feature = vec![0f32; dim];
        for _ in 0..count {
            let len = u16::from_le_bytes(take(2)?.try_into().unwrap()) as usize;
            let doc_id = std::str::from_utf8(take(len)?)
                .map_err(|_| Error::format("doc_id is not UTF-8"))?
                .to_string();
            let mut v = [0u32; 4];
            for slot in &mut v {
                *slot = u32::from_le_bytes(take(4)?.try_into().unwrap());
            }
            let bbox = BBox::new(v[0], v[1], v[2], v[3]).map_err(|e| Error::Format(e.to_string()))?;
            let raw = take(4 * dim)?;
            for (f, chunk) in feature.iter_mut().zip(raw.chunks_exact(4)) {
                *f = f32::from_le_bytes(chunk.try_into().unwrap());
            }
            store.push(doc_id, bbox, &feature)?;
        }
        if pos != bytes.len() {
            return Err(Error::Format(format!("{} trailing bytes after records", bytes.len() - pos)));
        }
        Ok(store)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

/// Builds a store from a raw little-endian row-major f32 matrix with rows of
/// `dim` values and a manifest of `doc_id<TAB>x<TAB>y<TAB>w<TAB>h` lines, one
/// per row.
pub fn import_features(matrix: &[u8], dim: usize, manifest: &str) -> Result<FeatureStore> {
    if dim == 0 {
        return Err(Error::Param("feature dim must be positive".into()));
    }
    let rows: Vec<(String, BBox)> = manifest
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| parse_box_line(l).map_err(|e| Error::Format(format!("manifest line {}: {e}", n + 1))))
        .collect::<Result<_>>()?;
    let row_bytes = 4 * dim;
    if matrix.len() % row_bytes != 0 {
        return Err(Error::Format(format!(
            "matrix size {} is not a whole number of {dim}-value rows",
            matrix.len()
        )));
    }
    let matrix_rows = matrix.len() / row_bytes;
    if matrix_rows != rows.len() {
        return Err(Error::Format(format!(
            "matrix has {matrix_rows} rows, manifest has {}",
            rows.len()
        )));
    }
    let mut store = FeatureStore::with_capacity(dim, rows.len());
    let mut row = vec![0f32; dim];
    for ((doc, bbox), raw) in rows.into_iter().zip(matrix.chunks_exact(row_bytes)) {
        for (f, c) in row.iter_mut().zip(raw.chunks_exact(4)) {
            *f = f32::from_le_bytes(c.try_into().unwrap());
        }
        store.push(doc, bbox, &row)?;
    }
    Ok(store)
}

pub fn import_feature_files(matrix: impl AsRef<Path>, dim: usize, manifest: impl AsRef<Path>) -> Result<FeatureStore> {
    import_features(&fs::read(matrix)?, dim, &fs::read_to_string(manifest)?)
}
