//! Hierarchical grouping of an over-segmentation into nested regions.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use crate::geometry::BBox;
use crate::image::GrayImage;

use super::segment::Segmentation;
use super::threshold::BinaryMask;

pub const COLOR_BINS: usize = 25;
pub const TEXTURE_BINS: usize = 8;

/// Non-negative weights of the four similarity terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityWeights {
    pub color: f64,
    pub texture: f64,
    pub size: f64,
    pub fill: f64,
}

impl SimilarityWeights {
    pub fn new(color: f64, texture: f64, size: f64, fill: f64) -> Self {
        Self { color, texture, size, fill }
    }

    pub fn sum(&self) -> f64 {
        self.color + self.texture + self.size + self.fill
    }

    pub(crate) fn as_array(&self) -> [f64; 4] {
        [self.color, self.texture, self.size, self.fill]
    }
}

impl Default for SimilarityWeights {
    fn default() -> Self {
        Self::new(1.0, 1.0, 1.0, 1.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    pub id: u32,
    pub bbox: BBox,
    pub size: u64,
    /// Ink pixels (from the adaptive-threshold mask) inside the region.
    pub ink: u64,
    pub color_hist: [f64; COLOR_BINS],
    pub texture_hist: [f64; TEXTURE_BINS],
}

impl Region {
    fn merge(&self, other: &Region, id: u32) -> Region {
        let size = self.size + other.size;
        let (wa, wb) = (self.size as f64 / size as f64, other.size as f64 / size as f64);
        let mut color_hist = [0.0; COLOR_BINS];
        for (i, c) in color_hist.iter_mut().enumerate() {
            *c = self.color_hist[i] * wa + other.color_hist[i] * wb;
        }
        let mut texture_hist = [0.0; TEXTURE_BINS];
        for (i, t) in texture_hist.iter_mut().enumerate() {
            *t = self.texture_hist[i] * wa + other.texture_hist[i] * wb;
        }
        Region {
            id,
            bbox: self.bbox.union_box(&other.bbox),
            size,
            ink: self.ink + other.ink,
            color_hist,
            texture_hist,
        }
    }
}

fn intersection(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.min(*y)).sum()
}

/// Weighted sum of color, texture, size and fill similarity.
pub fn region_similarity(a: &Region, b: &Region, weights: &SimilarityWeights, img_area: u64) -> f64 {
    let area = img_area as f64;
    let joint = (a.size + b.size) as f64;
    let s_color = intersection(&a.color_hist, &b.color_hist);
    let s_texture = intersection(&a.texture_hist, &b.texture_hist);
    let s_size = 1.0 - joint / area;
    let s_fill = 1.0 - (a.bbox.union_box(&b.bbox).area() as f64 - joint) / area;
    weights.color * s_color + weights.texture * s_texture + weights.size * s_size + weights.fill * s_fill
}

/// Gradient orientation bin and magnitude for every pixel, taken from
/// central differences of a Gaussian-smoothed (sigma = 1) copy.
pub(crate) struct OrientationField {
    bins: Vec<u8>,
    magnitude: Vec<f64>,
}

impl OrientationField {
    pub(crate) fn new(img: &GrayImage) -> Self {
        const KERNEL: [f64; 5] = [0.054_488_684_549_642_5, 0.244_201_342_003_231_6, 0.402_619_946_894_251_8, 0.244_201_342_003_231_6, 0.054_488_684_549_642_5];
        let (w, h) = (img.width() as usize, img.height() as usize);
        let src: Vec<f64> = img.pixels().iter().map(|&p| p as f64).collect();
        let clampi = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;

        let mut tmp = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (i, kv) in KERNEL.iter().enumerate() {
                    acc += kv * src[y * w + clampi(x as isize + i as isize - 2, w)];
                }
                tmp[y * w + x] = acc;
            }
        }
        let mut smooth = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (i, kv) in KERNEL.iter().enumerate() {
                    acc += kv * tmp[clampi(y as isize + i as isize - 2, h) * w + x];
                }
                smooth[y * w + x] = acc;
            }
        }

        let mut bins = vec![0u8; w * h];
        let mut magnitude = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                let gx = (smooth[y * w + clampi(x as isize + 1, w)] - smooth[y * w + clampi(x as isize - 1, w)]) * 0.5;
                let gy = (smooth[clampi(y as isize + 1, h) * w + x] - smooth[clampi(y as isize - 1, h) * w + x]) * 0.5;
                let mag = (gx * gx + gy * gy).sqrt();
                // sub-quantum gradients are smoothing round-off on flat paper
                if mag < 1e-6 {
                    continue;
                }
                let angle = gy.atan2(gx).rem_euclid(std::f64::consts::TAU);
                let bin = ((angle / std::f64::consts::TAU) * TEXTURE_BINS as f64) as usize;
                bins[y * w + x] = bin.min(TEXTURE_BINS - 1) as u8;
                magnitude[y * w + x] = mag;
            }
        }
        Self { bins, magnitude }
    }
}

/// Region descriptors for every segment plus the set of adjacent pairs.
pub(crate) fn build_regions(
    img: &GrayImage,
    seg: &Segmentation,
    mask: &BinaryMask,
    field: &OrientationField,
) -> (Vec<Region>, BTreeSet<(u32, u32)>) {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let n = seg.count;
    let mut minx = vec![u32::MAX; n];
    let mut miny = vec![u32::MAX; n];
    let mut maxx = vec![0u32; n];
    let mut maxy = vec![0u32; n];
    let mut size = vec![0u64; n];
    let mut ink = vec![0u64; n];
    let mut color = vec![[0.0f64; COLOR_BINS]; n];
    let mut texture = vec![[0.0f64; TEXTURE_BINS]; n];
    let mut adjacency = BTreeSet::new();

    let px = img.pixels();
    let bits = mask.bits();
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            let r = seg.labels[p] as usize;
            minx[r] = minx[r].min(x as u32);
            miny[r] = miny[r].min(y as u32);
            maxx[r] = maxx[r].max(x as u32);
            maxy[r] = maxy[r].max(y as u32);
            size[r] += 1;
            ink[r] += bits[p] as u64;
            color[r][px[p] as usize * COLOR_BINS / 256] += 1.0;
            texture[r][field.bins[p] as usize] += field.magnitude[p];
            if x + 1 < w {
                let q = seg.labels[p + 1];
                if q as usize != r {
                    adjacency.insert(ordered(r as u32, q));
                }
            }
            if y + 1 < h {
                let q = seg.labels[p + w];
                if q as usize != r {
                    adjacency.insert(ordered(r as u32, q));
                }
            }
        }
    }

    let regions = (0..n)
        .map(|r| {
            let mut color_hist = color[r];
            for c in color_hist.iter_mut() {
                *c /= size[r] as f64;
            }
            let mut texture_hist = texture[r];
            let total: f64 = texture_hist.iter().sum();
            if total > 0.0 {
                for t in texture_hist.iter_mut() {
                    *t /= total;
                }
            } else {
                texture_hist = [1.0 / TEXTURE_BINS as f64; TEXTURE_BINS];
            }
            Region {
                id: r as u32,
                bbox: BBox::from_corners(minx[r], miny[r], maxx[r], maxy[r]),
                size: size[r],
                ink: ink[r],
                color_hist,
                texture_hist,
            }
        })
        .collect();
    (regions, adjacency)
}

#[inline]
fn ordered(a: u32, b: u32) -> (u32, u32) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Pair ordering: highest similarity last, ties put the smallest id pair
/// last so that `pop_last` takes it.
#[derive(PartialEq)]
struct Candidate {
    sim: f64,
    pair: (u32, u32),
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.sim.total_cmp(&other.sim).then_with(|| other.pair.cmp(&self.pair))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Greedily merges the most similar adjacent pair until no adjacent pairs
/// remain. Returns every region of the hierarchy: the initial regions in id
/// order followed by each merged region in merge order. Merged regions get
/// fresh ids counting up from the number of initial regions.
pub(crate) fn hierarchical_grouping(
    regions: Vec<Region>,
    adjacency: BTreeSet<(u32, u32)>,
    weights: &SimilarityWeights,
    img_area: u64,
) -> Vec<Region> {
    let mut all = regions;
    // neighbour id -> similarity, per region
    let mut neighbours: Vec<BTreeMap<u32, f64>> = vec![BTreeMap::new(); all.len()];
    let mut live = BTreeSet::new();
    for (a, b) in adjacency {
        let sim = region_similarity(&all[a as usize], &all[b as usize], weights, img_area);
        neighbours[a as usize].insert(b, sim);
        neighbours[b as usize].insert(a, sim);
        live.insert(Candidate { sim, pair: (a, b) });
    }

    while let Some(Candidate { pair: (a, b), .. }) = live.pop_last() {
        let id = all.len() as u32;
        let merged = all[a as usize].merge(&all[b as usize], id);
        all.push(merged);

        let mut around = BTreeSet::new();
        for gone in [a, b] {
            for (nb, sim) in std::mem::take(&mut neighbours[gone as usize]) {
                live.remove(&Candidate { sim, pair: ordered(nb, gone) });
                neighbours[nb as usize].remove(&gone);
                if nb != a && nb != b {
                    around.insert(nb);
                }
            }
        }
        let mut own = BTreeMap::new();
        for nb in around {
            let sim = region_similarity(&all[nb as usize], &all[id as usize], weights, img_area);
            neighbours[nb as usize].insert(id, sim);
            own.insert(nb, sim);
            live.insert(Candidate { sim, pair: (nb, id) });
        }
        neighbours.push(own);
    }
    all
}
