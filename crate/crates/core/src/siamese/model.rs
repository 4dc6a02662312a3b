use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::distance::euclidean;
use crate::error::{Error, Result};
use crate::image::GrayImage;

use super::network::{Architecture, Trace};

/// Anything that maps a model-sized patch to a feature vector.
pub trait Embedder {
    fn embed(&self, patch: &GrayImage) -> Result<Vec<f32>>;
}

/// Scalar affine map from pair distance to the similarity logit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistanceHead {
    pub w: f32,
    pub b: f32,
}

impl DistanceHead {
    pub fn logit(&self, distance: f64) -> f64 {
        self.w as f64 * distance + self.b as f64
    }
}

/// Label of a training pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PairLabel {
    Dissimilar = 0,
    Similar = 1,
}

impl PairLabel {
    pub fn as_f64(self) -> f64 {
        self as u8 as f64
    }

    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(PairLabel::Dissimilar),
            1 => Some(PairLabel::Similar),
            _ => None,
        }
    }
}

/// Distance, head outputs and (when labelled) the cross-entropy loss of one pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairLossTerm {
    pub distance: f64,
    pub logit: f64,
    pub prob: f64,
    pub label: Option<PairLabel>,
    pub loss: Option<f64>,
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Binary cross-entropy of `sigmoid(logit)` against `label`, evaluated in
/// logit space: `-[y ln p + (1 - y) ln(1 - p)] = softplus(z) - y z`.
pub fn cross_entropy(logit: f64, label: PairLabel) -> f64 {
    softplus(logit) - label.as_f64() * logit
}

pub fn pair_distance<E: Embedder + ?Sized>(
    encoder: &E,
    head: DistanceHead,
    a: &GrayImage,
    b: &GrayImage,
    label: Option<PairLabel>,
) -> Result<PairLossTerm> {
    let ea = encoder.embed(a)?;
    let eb = encoder.embed(b)?;
    let distance = euclidean(&ea, &eb);
    let logit = head.logit(distance);
    Ok(PairLossTerm {
        distance,
        logit,
        prob: sigmoid(logit),
        label,
        loss: label.map(|y| cross_entropy(logit, y)),
    })
}

/// Shared encoder weights plus the distance head.
#[derive(Debug, Clone)]
pub struct SiameseModel {
    arch: Architecture,
    weights: Vec<f32>,
    head: DistanceHead,
    // f64 copy of `weights` used by every forward pass
    cache: Vec<f64>,
}

impl PartialEq for SiameseModel {
    fn eq(&self, other: &Self) -> bool {
        self.arch == other.arch
            && self.head.w.to_bits() == other.head.w.to_bits()
            && self.head.b.to_bits() == other.head.b.to_bits()
            && self.weights.len() == other.weights.len()
            && self.weights.iter().zip(&other.weights).all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

impl SiameseModel {
    pub const DEFAULT_HEAD: DistanceHead = DistanceHead { w: -1.0, b: 1.0 };

    pub fn from_parts(arch: Architecture, weights: Vec<f32>, head: DistanceHead) -> Result<Self> {
        if weights.len() != arch.param_count() {
            return Err(Error::Format(format!(
                "architecture needs {} weights, got {}",
                arch.param_count(),
                weights.len()
            )));
        }
        let cache = weights.iter().map(|&w| w as f64).collect();
        Ok(Self { arch, weights, head, cache })
    }

    /// Uniform Glorot weights, zero biases, default head.
    pub fn seeded(arch: Architecture, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = vec![0.0f32; arch.param_count()];
        for (i, layer) in arch.layers().iter().enumerate() {
            let Some((fan_in, fan_out)) = layer.fans(arch.layer_input(i)) else {
                continue;
            };
            let range = arch.layer_params(i);
            let n_bias = match layer {
                super::Layer::Conv { out_channels, .. } => *out_channels as usize,
                super::Layer::Dense { out } => *out as usize,
                _ => 0,
            };
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let n_weights = range.len() - n_bias;
            for w in &mut weights[range.start..range.start + n_weights] {
                *w = rng.gen_range(-limit..limit) as f32;
            }
        }
        Self::from_parts(arch, weights, Self::DEFAULT_HEAD).expect("weight count follows architecture")
    }

    pub fn zeroed(arch: Architecture) -> Self {
        let n = arch.param_count();
        Self::from_parts(arch, vec![0.0; n], DistanceHead { w: 0.0, b: 0.0 }).expect("weight count follows architecture")
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }
    pub fn weights(&self) -> &[f32] {
        &self.weights
    }
    pub fn head(&self) -> DistanceHead {
        self.head
    }
    pub fn set_head(&mut self, head: DistanceHead) {
        self.head = head;
    }
    pub fn embed_dim(&self) -> usize {
        self.arch.embed_dim()
    }
    /// Patch (width, height) the encoder consumes.
    pub fn input_size(&self) -> (u32, u32) {
        let s = self.arch.input();
        (s.width, s.height)
    }

    pub(crate) fn params_f64(&self) -> &[f64] {
        &self.cache
    }

    pub(crate) fn with_params(&self, params: &[f64], head_w: f64, head_b: f64) -> Self {
        let weights = params.iter().map(|&v| v as f32).collect();
        Self::from_parts(
            self.arch.clone(),
            weights,
            DistanceHead { w: head_w as f32, b: head_b as f32 },
        )
        .expect("same architecture")
    }

    pub(crate) fn input_vector(&self, patch: &GrayImage) -> Result<Vec<f64>> {
        let s = self.arch.input();
        if s.channels != 1 || patch.width() != s.width || patch.height() != s.height {
            return Err(Error::Input(format!(
                "patch is {}x{}, encoder expects {}x{}x{}",
                patch.width(),
                patch.height(),
                s.channels,
                s.width,
                s.height
            )));
        }
        Ok(normalize(patch))
    }

    /// Resamples an arbitrary-size patch to the encoder input and embeds it.
    pub fn embed_any(&self, patch: &GrayImage) -> Result<Vec<f32>> {
        let (w, h) = self.input_size();
        self.embed(&patch.resize_bilinear(w, h)?)
    }

    pub(crate) fn forward_f64(&self, params: &[f64], patch: &GrayImage) -> Result<Vec<f64>> {
        Ok(self.arch.forward(params, self.input_vector(patch)?))
    }

    pub(crate) fn trace(&self, params: &[f64], input: Vec<f64>) -> Trace {
        self.arch.forward_traced(params, input)
    }
}

impl Embedder for SiameseModel {
    fn embed(&self, patch: &GrayImage) -> Result<Vec<f32>> {
        let out = self.forward_f64(&self.cache, patch)?;
        Ok(out.into_iter().map(|v| v as f32).collect())
    }
}

/// Ink-positive scaling: paper (255) maps to 0, black ink to 1.
pub(crate) fn normalize(patch: &GrayImage) -> Vec<f64> {
    patch.pixels().iter().map(|&p| (255 - p) as f64 / 255.0).collect()
}

/// Loss of one pair and its gradient with respect to encoder weights and
/// both head parameters. Square-root derivative is evaluated at
/// `max(s, SQRT_FLOOR)` where `s` is the squared distance.
pub(crate) struct PairGradient {
    pub loss: f64,
    pub distance: f64,
    pub encoder: Vec<f64>,
    pub head_w: f64,
    pub head_b: f64,
}

pub(crate) const SQRT_FLOOR: f64 = 1e-12;

pub(crate) fn pair_loss(
    model: &SiameseModel,
    params: &[f64],
    head: (f64, f64),
    xa: &[f64],
    xb: &[f64],
    label: PairLabel,
) -> (f64, f64) {
    let ea = model.arch.forward(params, xa.to_vec());
    let eb = model.arch.forward(params, xb.to_vec());
    let s: f64 = ea.iter().zip(&eb).map(|(a, b)| (a - b) * (a - b)).sum();
    let d = s.sqrt();
    (cross_entropy(head.0 * d + head.1, label), d)
}

/// As [`pair_loss`], also returning the activation patterns of both branches.
pub(crate) fn pair_loss_with_pattern(
    model: &SiameseModel,
    params: &[f64],
    head: (f64, f64),
    xa: &[f64],
    xb: &[f64],
    label: PairLabel,
) -> (f64, Pattern) {
    let ta = model.trace(params, xa.to_vec());
    let tb = model.trace(params, xb.to_vec());
    let s: f64 = ta.output().iter().zip(tb.output()).map(|(a, b)| (a - b) * (a - b)).sum();
    let loss = cross_entropy(head.0 * s.sqrt() + head.1, label);
    (loss, (ta.activation_pattern(&model.arch), tb.activation_pattern(&model.arch)))
}

pub(crate) type Pattern = ((Vec<bool>, Vec<u32>), (Vec<bool>, Vec<u32>));

pub(crate) fn pair_pattern(model: &SiameseModel, params: &[f64], xa: &[f64], xb: &[f64]) -> Pattern {
    let ta = model.trace(params, xa.to_vec());
    let tb = model.trace(params, xb.to_vec());
    (ta.activation_pattern(&model.arch), tb.activation_pattern(&model.arch))
}

pub(crate) fn pair_loss_and_grad(
    model: &SiameseModel,
    params: &[f64],
    head: (f64, f64),
    xa: &[f64],
    xb: &[f64],
    label: PairLabel,
    encoder_grads: bool,
) -> PairGradient {
    let ta = model.trace(params, xa.to_vec());
    let tb = model.trace(params, xb.to_vec());
    let (ea, eb) = (ta.output(), tb.output());
    let s: f64 = ea.iter().zip(eb).map(|(a, b)| (a - b) * (a - b)).sum();
    let d = s.sqrt();
    let z = head.0 * d + head.1;
    let loss = cross_entropy(z, label);
    let dz = sigmoid(z) - label.as_f64();
    let dd = dz * head.0;
    let ds = dd * 0.5 / s.max(SQRT_FLOOR).sqrt();

    let mut grads = vec![0.0; params.len()];
    if encoder_grads {
        let ga: Vec<f64> = ea.iter().zip(eb).map(|(a, b)| 2.0 * (a - b) * ds).collect();
        let gb: Vec<f64> = ga.iter().map(|g| -g).collect();
        model.arch.backward(params, &ta, ga, &mut grads);
        model.arch.backward(params, &tb, gb, &mut grads);
    }
    PairGradient {
        loss,
        distance: d,
        encoder: grads,
        head_w: dz * d,
        head_b: dz,
    }
}

/// Deterministic random patch, handy for tests and benches.
pub fn random_patch(width: u32, height: u32, rng: &mut impl Rng) -> GrayImage {
    let px = (0..width * height).map(|_| rng.gen()).collect();
    GrayImage::new(width, height, px).expect("non-empty patch")
}
