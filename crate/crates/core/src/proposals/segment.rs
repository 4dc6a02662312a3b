//! Graph-based over-segmentation on the 4-connected pixel grid.
//!
//! Edges carry the absolute intensity difference of their endpoints and are
//! visited in ascending `(weight, source, target)` order. Two components
//! merge when the edge weight does not exceed the smaller of their
//! `internal difference + k / size` thresholds.

use crate::image::GrayImage;

struct DisjointSet {
    parent: Vec<u32>,
    rank: Vec<u8>,
    size: Vec<u32>,
    /// Largest edge weight inside the component's spanning tree.
    internal: Vec<f64>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n as u32).collect(),
            rank: vec![0; n],
            size: vec![1; n],
            internal: vec![0.0; n],
        }
    }

    fn find(&mut self, mut x: u32) -> u32 {
        let mut root = x;
        while self.parent[root as usize] != root {
            root = self.parent[root as usize];
        }
        while self.parent[x as usize] != root {
            let next = self.parent[x as usize];
            self.parent[x as usize] = root;
            x = next;
        }
        root
    }

    fn union(&mut self, a: u32, b: u32, weight: f64) {
        let (a, b) = (a as usize, b as usize);
        let (hi, lo) = if self.rank[a] >= self.rank[b] { (a, b) } else { (b, a) };
        self.parent[lo] = hi as u32;
        if self.rank[hi] == self.rank[lo] {
            self.rank[hi] += 1;
        }
        self.size[hi] += self.size[lo];
        self.internal[hi] = weight;
    }
}

/// Pixel partition: `labels[i]` is the region of pixel `i` (row-major).
/// Region ids are dense and numbered by first appearance in row-major order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segmentation {
    pub width: u32,
    pub height: u32,
    pub labels: Vec<u32>,
    pub count: usize,
}

pub fn segment(img: &GrayImage, k: f64) -> Segmentation {
    let values: Vec<f32> = img.pixels().iter().map(|&p| p as f32).collect();
    segment_values(img.width(), img.height(), &values, k)
}

/// [`segment`] over arbitrary real intensities.
pub(crate) fn segment_values(width: u32, height: u32, px: &[f32], k: f64) -> Segmentation {
    let (w, h) = (width as usize, height as usize);
    let n = w * h;
    debug_assert_eq!(px.len(), n);

    let mut edges: Vec<(f32, u32, u32)> = Vec::with_capacity(2 * n);
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            if x + 1 < w {
                edges.push(((px[p] - px[p + 1]).abs(), p as u32, (p + 1) as u32));
            }
            if y + 1 < h {
                edges.push(((px[p] - px[p + w]).abs(), p as u32, (p + w) as u32));
            }
        }
    }
    edges.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then((a.1, a.2).cmp(&(b.1, b.2))));

    let mut ds = DisjointSet::new(n);
    for &(wt, a, b) in &edges {
        let ra = ds.find(a);
        let rb = ds.find(b);
        if ra == rb {
            continue;
        }
        let wt = wt as f64;
        let ta = ds.internal[ra as usize] + k / ds.size[ra as usize] as f64;
        let tb = ds.internal[rb as usize] + k / ds.size[rb as usize] as f64;
        if wt <= ta.min(tb) {
            ds.union(ra, rb, wt);
        }
    }

    let mut remap = vec![u32::MAX; n];
    let mut labels = vec![0u32; n];
    let mut count = 0u32;
    for p in 0..n {
        let root = ds.find(p as u32) as usize;
        if remap[root] == u32::MAX {
            remap[root] = count;
            count += 1;
        }
        labels[p] = remap[root];
    }
    Segmentation {
        width,
        height,
        labels,
        count: count as usize,
    }
}

/// 3x3 median with edge clamping.
pub(crate) fn median3(img: &GrayImage) -> Vec<f32> {
    let (w, h) = (img.width() as i64, img.height() as i64);
    let mut out = Vec::with_capacity((w * h) as usize);
    let mut win = [0u8; 9];
    for y in 0..h {
        for x in 0..w {
            let mut n = 0;
            for dy in -1..=1 {
                for dx in -1..=1 {
                    win[n] = img.get((x + dx).clamp(0, w - 1) as u32, (y + dy).clamp(0, h - 1) as u32);
                    n += 1;
                }
            }
            out.push(*win.select_nth_unstable(4).1 as f32);
        }
    }
    out
}
