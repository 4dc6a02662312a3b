//! Synthetic pages with planted stamp patterns and their ground truth.
//!
//! Every stamp is a dark rectangular frame around one of eight interior
//! motifs. Pages are light noisy paper with optional rows of dark dashes
//! standing in for text lines.

use std::fmt;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Corpus, Document};
use crate::error::{Error, Result};
use crate::eval::{GroundTruth, GtEntry};
use crate::geometry::BBox;
use crate::image::GrayImage;
use crate::index::FeatureStore;
use crate::siamese::LabeledPatch;

pub const GROUND_TRUTH_FILE: &str = "groundtruth.tsv";

const PAPER: i32 = 245;
const PAPER_NOISE: i32 = 6;
const FRAME: u32 = 2;
// free space kept around each stamp so neighbours never touch
const GAP: u32 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum StampKind {
    BoxSolid,
    HStripes,
    Plus,
    VStripes,
    Dots,
    Cross,
    Checker,
    Ring,
}

impl StampKind {
    pub const ALL: [StampKind; 8] = [
        StampKind::BoxSolid,
        StampKind::HStripes,
        StampKind::Plus,
        StampKind::VStripes,
        StampKind::Dots,
        StampKind::Cross,
        StampKind::Checker,
        StampKind::Ring,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StampKind::BoxSolid => "box-solid",
            StampKind::HStripes => "hstripes",
            StampKind::Plus => "plus",
            StampKind::VStripes => "vstripes",
            StampKind::Dots => "dots",
            StampKind::Cross => "cross",
            StampKind::Checker => "checker",
            StampKind::Ring => "ring",
        }
    }

    /// Nominal (width, height) before per-plant scaling.
    pub fn base_size(self) -> (u32, u32) {
        match self {
            StampKind::BoxSolid | StampKind::HStripes | StampKind::Plus => (48, 36),
            StampKind::VStripes | StampKind::Dots => (36, 48),
            StampKind::Cross | StampKind::Checker => (40, 40),
            StampKind::Ring => (44, 44),
        }
    }

    /// Whether local pixel `(x, y)` of a `w` x `h` stamp is ink.
    pub fn is_ink(self, x: u32, y: u32, w: u32, h: u32) -> bool {
        if x < FRAME || y < FRAME || x + FRAME >= w || y + FRAME >= h {
            return true;
        }
        // interior coordinates, with a 2 px clear margin inside the frame
        let m = FRAME + 2;
        if x < m || y < m || x + m >= w || y + m >= h {
            return false;
        }
        let (ix, iy) = (x - m, y - m);
        let (iw, ih) = (w - 2 * m, h - 2 * m);
        match self {
            StampKind::BoxSolid => true,
            StampKind::HStripes => iy % 6 < 3,
            StampKind::VStripes => ix % 6 < 3,
            StampKind::Plus => {
                let bx = (iw / 5).max(2);
                let by = (ih / 5).max(2);
                ix.abs_diff(iw / 2) <= bx / 2 || iy.abs_diff(ih / 2) <= by / 2
            }
            StampKind::Dots => ix % 8 < 4 && iy % 8 < 4,
            StampKind::Cross => {
                let fx = ix as f64 / iw as f64;
                let fy = iy as f64 / ih as f64;
                let t = 2.0 / iw.min(ih) as f64;
                (fx - fy).abs() < t || (fx + fy - 1.0).abs() < t
            }
            StampKind::Checker => (ix / 6 + iy / 6) % 2 == 0,
            StampKind::Ring => {
                let cx = iw as f64 / 2.0 - 0.5;
                let cy = ih as f64 / 2.0 - 0.5;
                let r = ((ix as f64 - cx).powi(2) + (iy as f64 - cy).powi(2)).sqrt();
                let outer = iw.min(ih) as f64 / 2.0;
                r <= outer && r >= outer - 4.0
            }
        }
    }
}

impl fmt::Display for StampKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub pages: usize,
    pub plants_per_page: usize,
    pub width: u32,
    pub height: u32,
    /// Draw rows of dashes between stamps.
    pub clutter: bool,
    /// Inclusive scale range applied to each stamp's nominal size.
    pub scale: (f64, f64),
    /// Inclusive range of ink gray levels.
    pub ink: (u8, u8),
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            pages: 20,
            plants_per_page: 4,
            width: 400,
            height: 300,
            clutter: true,
            scale: (0.85, 1.15),
            ink: (20, 80),
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.pages == 0 {
            return Err(Error::Param("pages must be at least 1".into()));
        }
        if !(self.scale.0 > 0.0 && self.scale.0 <= self.scale.1) {
            return Err(Error::Param(format!("bad scale range {:?}", self.scale)));
        }
        if self.ink.0 > self.ink.1 || self.ink.1 as i32 >= PAPER - PAPER_NOISE {
            return Err(Error::Param(format!("bad ink range {:?}", self.ink)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthPage {
    pub doc_id: String,
    pub image: GrayImage,
    pub plants: Vec<(StampKind, BBox)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub pages: Vec<SynthPage>,
}

impl SynthCorpus {
    pub fn ground_truth(&self) -> GroundTruth {
        let entries = self
            .pages
            .iter()
            .flat_map(|p| {
                p.plants
                    .iter()
                    .map(|(k, b)| GtEntry::new(p.doc_id.clone(), k.name(), *b))
            })
            .collect();
        GroundTruth::new(entries).expect("plants never overlap")
    }

    pub fn corpus(&self) -> Corpus {
        let docs = self
            .pages
            .iter()
            .map(|p| Document::new(p.doc_id.clone(), p.image.clone()))
            .collect();
        Corpus::new(docs).expect("doc ids are unique")
    }

    /// Writes `<doc_id>.pgm` per page plus the ground-truth file.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        for p in &self.pages {
            p.image.save_pgm(dir.join(format!("{}.pgm", p.doc_id)))?;
        }
        self.ground_truth().save(dir.join(GROUND_TRUTH_FILE))
    }
}

/// Draws a single stamp on plain paper, for building training patches.
pub fn render_stamp(kind: StampKind, width: u32, height: u32, ink: u8) -> Result<GrayImage> {
    let mut img = GrayImage::filled(width, height, PAPER as u8)?;
    for y in 0..height {
        for x in 0..width {
            if kind.is_ink(x, y, width, height) {
                img.set(x, y, ink);
            }
        }
    }
    Ok(img)
}

/// `per_category` rendered samples of every stamp kind, each at a random
/// scale and ink level on noisy paper, resampled to `width` x `height`.
/// Classes index [`StampKind::ALL`].
pub fn stamp_dataset(per_category: usize, width: u32, height: u32, cfg: &SynthConfig) -> Result<Vec<LabeledPatch>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::with_capacity(per_category * StampKind::ALL.len());
    for (class, &kind) in StampKind::ALL.iter().enumerate() {
        for _ in 0..per_category {
            let s = rng.gen_range(cfg.scale.0..=cfg.scale.1);
            let (bw, bh) = kind.base_size();
            let sw = (bw as f64 * s).round() as u32;
            let sh = (bh as f64 * s).round() as u32;
            let ink = rng.gen_range(cfg.ink.0..=cfg.ink.1);
            let mut img = render_stamp(kind, sw, sh, ink)?;
            for p in img.pixels_mut() {
                if *p as i32 == PAPER {
                    *p = (PAPER + rng.gen_range(-PAPER_NOISE..=PAPER_NOISE)) as u8;
                }
            }
            out.push(LabeledPatch {
                class: class as u32,
                patch: img.resize_bilinear(width, height)?,
            });
        }
    }
    Ok(out)
}

/// Store of `records` uniform random features in `[-1, 1)` spread over up to
/// 1000 documents, with random boxes inside a 1000x1000 page.
pub fn random_store(dim: usize, records: usize, seed: u64) -> Result<FeatureStore> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = FeatureStore::with_capacity(dim, records);
    let docs = records.clamp(1, 1000);
    let mut feature = vec![0f32; dim];
    for i in 0..records {
        let (w, h) = (rng.gen_range(8..200), rng.gen_range(8..200));
        let bbox = BBox::new(rng.gen_range(0..1000 - w), rng.gen_range(0..1000 - h), w, h)?;
        feature.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
        store.push(&format!("doc{:04}", i % docs), bbox, &feature)?;
    }
    Ok(store)
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthCorpus> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let digits = cfg.pages.to_string().len().max(3);
    let mut pages = Vec::with_capacity(cfg.pages);
    for i in 0..cfg.pages {
        let doc_id = format!("page{:0digits$}", i);
        pages.push(generate_page(doc_id, cfg, &mut rng)?);
    }
    Ok(SynthCorpus { pages })
}

fn generate_page(doc_id: String, cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Result<SynthPage> {
    let (w, h) = (cfg.width, cfg.height);
    let mut px: Vec<u8> = (0..w as usize * h as usize)
        .map(|_| (PAPER + rng.gen_range(-PAPER_NOISE..=PAPER_NOISE)) as u8)
        .collect();

    let mut plants: Vec<(StampKind, BBox)> = Vec::with_capacity(cfg.plants_per_page);
    for _ in 0..cfg.plants_per_page {
        let kind = StampKind::ALL[rng.gen_range(0..StampKind::ALL.len())];
        let s = rng.gen_range(cfg.scale.0..=cfg.scale.1);
        let (bw, bh) = kind.base_size();
        let sw = ((bw as f64 * s).round() as u32).max(2 * FRAME + 6);
        let sh = ((bh as f64 * s).round() as u32).max(2 * FRAME + 6);
        if sw + 2 * GAP > w || sh + 2 * GAP > h {
            return Err(Error::Param(format!("{sw}x{sh} stamp does not fit a {w}x{h} page")));
        }
        let mut placed = None;
        for _ in 0..1000 {
            let x = rng.gen_range(GAP..=w - sw - GAP);
            let y = rng.gen_range(GAP..=h - sh - GAP);
            let b = BBox::new(x, y, sw, sh)?;
            if plants.iter().all(|(_, o)| !padded(o, GAP).overlaps(&b)) {
                placed = Some(b);
                break;
            }
        }
        let b = placed.ok_or_else(|| {
            Error::Param(format!(
                "could not place {} non-overlapping stamps on a {w}x{h} page",
                cfg.plants_per_page
            ))
        })?;
        let ink = rng.gen_range(cfg.ink.0..=cfg.ink.1);
        for y in 0..sh {
            for x in 0..sw {
                if kind.is_ink(x, y, sw, sh) {
                    px[((b.y() + y) * w + b.x() + x) as usize] = ink;
                }
            }
        }
        plants.push((kind, b));
    }

    if cfg.clutter {
        draw_clutter(&mut px, w, h, &plants, rng);
    }
    Ok(SynthPage {
        doc_id,
        image: GrayImage::new(w, h, px)?,
        plants,
    })
}

/// Rows of short dashes, kept `GAP` pixels clear of every stamp.
fn draw_clutter(px: &mut [u8], w: u32, h: u32, plants: &[(StampKind, BBox)], rng: &mut ChaCha8Rng) {
    let mut y = GAP;
    while y + 4 < h - GAP {
        if rng.gen_bool(0.5) {
            let mut x = GAP + rng.gen_range(0..20);
            while x + 4 < w - GAP {
                let len = rng.gen_range(6..24).min(w - GAP - x);
                let word = BBox::new(x, y, len, 3).expect("nonzero");
                if plants.iter().all(|(_, b)| !padded(b, GAP).overlaps(&word)) {
                    let ink = rng.gen_range(60..120u8);
                    for yy in y..y + 3 {
                        for xx in x..x + len {
                            px[(yy * w + xx) as usize] = ink;
                        }
                    }
                }
                x += len + rng.gen_range(5..12);
            }
        }
        y += 14;
    }
}

fn padded(b: &BBox, pad: u32) -> BBox {
    BBox::from_corners(
        b.x().saturating_sub(pad),
        b.y().saturating_sub(pad),
        b.right() - 1 + pad,
        b.bottom() - 1 + pad,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(pages: usize, plants: usize, seed: u64) -> SynthConfig {
        SynthConfig {
            pages,
            plants_per_page: plants,
            seed,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn one_page_one_plant() {
        let c = generate(&small(1, 1, 3)).unwrap();
        assert_eq!(c.pages.len(), 1);
        assert_eq!(c.ground_truth().len(), 1);
    }

    #[test]
    fn same_seed_same_pages() {
        assert_eq!(generate(&small(3, 4, 9)).unwrap(), generate(&small(3, 4, 9)).unwrap());
        assert_ne!(generate(&small(3, 4, 9)).unwrap(), generate(&small(3, 4, 10)).unwrap());
    }

    #[test]
    fn plants_are_in_bounds_and_apart() {
        let c = generate(&small(10, 6, 1)).unwrap();
        for p in &c.pages {
            assert_eq!(p.plants.len(), 6);
            for (i, (_, a)) in p.plants.iter().enumerate() {
                assert!(a.fits_within(400, 300));
                for (_, b) in &p.plants[i + 1..] {
                    assert!(!padded(a, GAP).overlaps(b));
                }
            }
        }
    }

    #[test]
    fn stamps_have_a_closed_frame() {
        for k in StampKind::ALL {
            let (w, h) = k.base_size();
            let img = render_stamp(k, w, h, 40).unwrap();
            for x in 0..w {
                assert_eq!(img.get(x, 0), 40);
                assert_eq!(img.get(x, h - 1), 40);
            }
            for y in 0..h {
                assert_eq!(img.get(0, y), 40);
                assert_eq!(img.get(w - 1, y), 40);
            }
        }
    }

    #[test]
    fn stamps_differ_pairwise() {
        let imgs: Vec<GrayImage> = StampKind::ALL
            .iter()
            .map(|&k| render_stamp(k, 40, 40, 40).unwrap())
            .collect();
        for i in 0..imgs.len() {
            for j in i + 1..imgs.len() {
                assert_ne!(imgs[i], imgs[j], "{:?} vs {:?}", StampKind::ALL[i], StampKind::ALL[j]);
            }
        }
    }

    #[test]
    fn too_many_plants_is_an_error() {
        assert!(generate(&small(1, 200, 0)).is_err());
    }
}
