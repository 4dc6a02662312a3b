//! Similar / dissimilar pair construction and the pair-list file.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::GrayImage;

use super::model::PairLabel;
use super::train::TrainConfig;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairSample {
    pub a: GrayImage,
    pub b: GrayImage,
    pub label: PairLabel,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledPatch {
    pub class: u32,
    pub patch: GrayImage,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PairSplit {
    pub train: Vec<PairSample>,
    pub test: Vec<PairSample>,
}

/// Index pairs `(i, j, label)` with `i < j`, already shuffled.
pub fn make_pair_indices(classes: &[u32], cfg: &TrainConfig) -> Result<Vec<(usize, usize, PairLabel)>> {
    cfg.validate()?;
    let mut per_class = std::collections::BTreeMap::<u32, usize>::new();
    for c in classes {
        *per_class.entry(*c).or_default() += 1;
    }
    if per_class.len() < 2 {
        return Err(Error::Input(format!("pairs need at least 2 classes, got {}", per_class.len())));
    }
    if let Some((c, n)) = per_class.iter().find(|(_, n)| **n < 2) {
        return Err(Error::Input(format!("class {c} has {n} sample(s); at least 2 required")));
    }

    let mut positives = Vec::new();
    let mut negatives = Vec::new();
    for i in 0..classes.len() {
        for j in i + 1..classes.len() {
            if classes[i] == classes[j] {
                positives.push((i, j, PairLabel::Similar));
            } else {
                negatives.push((i, j, PairLabel::Dissimilar));
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    if let Some(m) = cfg.max_positive {
        if m > positives.len() {
            return Err(Error::Count(format!(
                "requested {m} similar pairs, only {} exist",
                positives.len()
            )));
        }
        let mut keep = sample(&mut rng, positives.len(), m).into_vec();
        keep.sort_unstable();
        positives = keep.into_iter().map(|k| positives[k]).collect();
    }

    let want_neg = (cfg.neg_ratio * positives.len() as f64).round() as usize;
    if want_neg > negatives.len() {
        return Err(Error::Count(format!(
            "need {want_neg} dissimilar pairs, only {} exist",
            negatives.len()
        )));
    }
    let mut keep = sample(&mut rng, negatives.len(), want_neg).into_vec();
    keep.sort_unstable();

    let mut all = positives;
    all.extend(keep.into_iter().map(|k| negatives[k]));
    all.shuffle(&mut rng);
    Ok(all)
}

/// Number of pairs that go to the training partition.
pub fn train_count(n: usize, split: f64) -> usize {
    (split * n as f64).floor() as usize
}

/// Leading `floor(split * n)` pairs train, the rest test.
pub fn split_pairs<T>(mut pairs: Vec<T>, split: f64) -> (Vec<T>, Vec<T>) {
    let k = train_count(pairs.len(), split);
    let test = pairs.split_off(k);
    (pairs, test)
}

pub fn make_pairs(dataset: &[LabeledPatch], cfg: &TrainConfig) -> Result<PairSplit> {
    let classes: Vec<u32> = dataset.iter().map(|p| p.class).collect();
    let pairs = make_pair_indices(&classes, cfg)?
        .into_iter()
        .map(|(i, j, label)| PairSample {
            a: dataset[i].patch.clone(),
            b: dataset[j].patch.clone(),
            label,
        })
        .collect();
    let (train, test) = split_pairs(pairs, cfg.split);
    Ok(PairSplit { train, test })
}

/// One `path_a<TAB>path_b<TAB>label` entry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairListEntry {
    pub a: PathBuf,
    pub b: PathBuf,
    pub label: PairLabel,
}

pub fn parse_pair_list(text: &str) -> Result<Vec<PairListEntry>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        let label = match f.as_slice() {
            [_, _, l] => l.trim().parse::<u8>().ok().and_then(PairLabel::from_u8),
            _ => None,
        }
        .ok_or_else(|| Error::Format(format!("pair list line {}: expected path<TAB>path<TAB>0|1", n + 1)))?;
        out.push(PairListEntry {
            a: PathBuf::from(f[0]),
            b: PathBuf::from(f[1]),
            label,
        });
    }
    Ok(out)
}

pub fn format_pair_list(entries: &[PairListEntry]) -> String {
    let mut s = String::new();
    for e in entries {
        let _ = writeln!(s, "{}\t{}\t{}", e.a.display(), e.b.display(), e.label as u8);
    }
    s
}

/// Loads every listed PGM and resamples it to `size` when needed. Relative
/// paths resolve against `base`.
pub fn load_pair_samples(entries: &[PairListEntry], base: &Path, size: (u32, u32)) -> Result<Vec<PairSample>> {
    let load = |p: &Path| -> Result<GrayImage> {
        let full = if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
        GrayImage::load_pgm(&full)?.resize_bilinear(size.0, size.1)
    };
    entries
        .iter()
        .map(|e| {
            Ok(PairSample {
                a: load(&e.a)?,
                b: load(&e.b)?,
                label: e.label,
            })
        })
        .collect()
}
