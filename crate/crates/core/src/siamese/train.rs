//! Minibatch SGD on the mean pair cross-entropy.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::model::{pair_loss_and_grad, SiameseModel};
use super::PairSample;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr0: f64,
    /// Per-epoch multiplicative learning-rate decay.
    pub decay: f64,
    pub epochs: usize,
    pub batch: usize,
    /// Dissimilar pairs per similar pair.
    pub neg_ratio: f64,
    /// Fraction of pairs in the training partition.
    pub split: f64,
    pub seed: u64,
    /// Cap on similar pairs; `None` uses every same-class pair.
    pub max_positive: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr0: 1e-3,
            decay: 0.95,
            epochs: 30,
            batch: 16,
            neg_ratio: 1.5,
            split: 0.7,
            seed: 0,
            max_positive: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 > 0.0) || !self.lr0.is_finite() {
            return Err(Error::Param(format!("lr0 must be positive, got {}", self.lr0)));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::Param(format!("decay must lie in (0, 1], got {}", self.decay)));
        }
        if !(self.neg_ratio > 0.0) || !self.neg_ratio.is_finite() {
            return Err(Error::Param(format!("neg_ratio must be positive, got {}", self.neg_ratio)));
        }
        if !(self.split > 0.0 && self.split < 1.0) {
            return Err(Error::Param(format!("split must lie in (0, 1), got {}", self.split)));
        }
        if self.batch == 0 {
            return Err(Error::Param("batch must be at least 1".into()));
        }
        Ok(())
    }

    pub fn learning_rate(&self, epoch: usize) -> f64 {
        self.lr0 * self.decay.powi(epoch as i32)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: SiameseModel,
    /// Mean training loss of each epoch.
    pub loss_trace: Vec<f64>,
}

pub fn train(model: &SiameseModel, pairs: &[PairSample], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if cfg.epochs == 0 {
        return Ok(TrainOutcome { model: model.clone(), loss_trace: Vec::new() });
    }
    if pairs.is_empty() {
        return Err(Error::Input("no training pairs".into()));
    }
    let inputs: Vec<(Vec<f64>, Vec<f64>)> = pairs
        .iter()
        .map(|p| Ok((model.input_vector(&p.a)?, model.input_vector(&p.b)?)))
        .collect::<Result<_>>()?;

    let mut params = model.params_f64().to_vec();
    let head = model.head();
    let (mut hw, mut hb) = (head.w as f64, head.b as f64);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut loss_trace = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let lr = cfg.learning_rate(epoch);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch) {
            let mut g_enc = vec![0.0; params.len()];
            let (mut g_w, mut g_b) = (0.0, 0.0);
            for &i in batch {
                let g = pair_loss_and_grad(model, &params, (hw, hb), &inputs[i].0, &inputs[i].1, pairs[i].label, true);
                total += g.loss;
                for (acc, v) in g_enc.iter_mut().zip(&g.encoder) {
                    *acc += v;
                }
                g_w += g.head_w;
                g_b += g.head_b;
            }
            let scale = lr / batch.len() as f64;
            for (p, g) in params.iter_mut().zip(&g_enc) {
                *p -= scale * g;
            }
            hw -= scale * g_w;
            hb -= scale * g_b;
        }
        let mean = total / pairs.len() as f64;
        if !mean.is_finite() || !hw.is_finite() || !hb.is_finite() || params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Divergence { epoch, loss: mean });
        }
        log::debug!("epoch {epoch}: lr {lr:.3e} mean loss {mean:.6}");
        loss_trace.push(mean);
    }
    Ok(TrainOutcome {
        model: model.with_params(&params, hw, hb),
        loss_trace,
    })
}
