//! Central finite-difference verification of the pair-loss gradient.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::model::{pair_loss, pair_loss_and_grad, pair_loss_with_pattern, pair_pattern, SiameseModel};
use super::PairSample;

/// Pairs closer than this sit on the square-root kink and are not checked.
pub const KINK_DISTANCE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradScope {
    /// Every encoder weight plus both head parameters.
    All,
    /// Encoder frozen; only the two head parameters.
    HeadOnly,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    pub eps: f64,
    pub scope: GradScope,
    /// Compare a random subset of this many encoder parameters (at least
    /// 200) instead of all of them.
    pub max_params: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            eps: 1e-3,
            scope: GradScope::All,
            max_params: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GradCheck {
    /// `kinks` counts parameters left out because a perturbation of `eps`
    /// moved a rectifier or pooling window onto a different linear piece,
    /// where central differences do not estimate the derivative.
    Checked { max_rel_error: f64, compared: usize, kinks: usize },
    /// The pair distance is below [`KINK_DISTANCE`].
    SkippedAtKink { distance: f64 },
}

impl GradCheck {
    pub fn max_rel_error(&self) -> Option<f64> {
        match self {
            GradCheck::Checked { max_rel_error, .. } => Some(*max_rel_error),
            GradCheck::SkippedAtKink { .. } => None,
        }
    }
}

fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

pub fn grad_check(model: &SiameseModel, sample_pair: &PairSample, opts: &GradCheckOptions) -> Result<GradCheck> {
    if !(1e-5..=1e-3).contains(&opts.eps) {
        return Err(Error::Param(format!("eps must lie in [1e-5, 1e-3], got {}", opts.eps)));
    }
    let xa = model.input_vector(&sample_pair.a)?;
    let xb = model.input_vector(&sample_pair.b)?;
    let mut params = model.params_f64().to_vec();
    let head = model.head();
    let (hw, hb) = (head.w as f64, head.b as f64);
    let label = sample_pair.label;
    let with_encoder = opts.scope == GradScope::All;

    let g = pair_loss_and_grad(model, &params, (hw, hb), &xa, &xb, label, with_encoder);
    if g.distance < KINK_DISTANCE {
        return Ok(GradCheck::SkippedAtKink { distance: g.distance });
    }

    let eps = opts.eps;
    let mut worst = rel_error(g.head_w, {
        let up = pair_loss(model, &params, (hw + eps, hb), &xa, &xb, label).0;
        let dn = pair_loss(model, &params, (hw - eps, hb), &xa, &xb, label).0;
        (up - dn) / (2.0 * eps)
    });
    worst = worst.max(rel_error(g.head_b, {
        let up = pair_loss(model, &params, (hw, hb + eps), &xa, &xb, label).0;
        let dn = pair_loss(model, &params, (hw, hb - eps), &xa, &xb, label).0;
        (up - dn) / (2.0 * eps)
    }));
    let mut compared = 2;
    let mut kinks = 0;

    if with_encoder {
        let n = params.len();
        let indices: Vec<usize> = match opts.max_params {
            Some(m) if m.max(200) < n => {
                let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
                let mut idx = sample(&mut rng, n, m.max(200)).into_vec();
                idx.sort_unstable();
                idx
            }
            _ => (0..n).collect(),
        };
        let base = pair_pattern(model, &params, &xa, &xb);
        for i in indices {
            let orig = params[i];
            params[i] = orig + eps;
            let (up, up_pattern) = pair_loss_with_pattern(model, &params, (hw, hb), &xa, &xb, label);
            params[i] = orig - eps;
            let (dn, dn_pattern) = pair_loss_with_pattern(model, &params, (hw, hb), &xa, &xb, label);
            params[i] = orig;
            if up_pattern != base || dn_pattern != base {
                kinks += 1;
                continue;
            }
            worst = worst.max(rel_error(g.encoder[i], (up - dn) / (2.0 * eps)));
            compared += 1;
        }
    }
    Ok(GradCheck::Checked { max_rel_error: worst, compared, kinks })
}
