//! One-hidden-layer GELU perceptron with a single logit.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{check_input, FitConfig};
use crate::error::{Error, Result};
use crate::optim::{AdamW, AdamWConfig, EpochRecord};
use crate::rng::rng_for;

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

pub fn gelu_grad(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    cdf + x * pdf
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy of `logit` against `y`, numerically stable.
pub fn bce_with_logits(logit: f64, y: f64) -> f64 {
    logit.max(0.0) - logit * y + (-logit.abs()).exp().ln_1p()
}

/// Inputs are standardized with the stored training mean/scale before the
/// first affine map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub input_dim: usize,
    pub hidden_width: usize,
    pub input_mean: Vec<f64>,
    pub input_scale: Vec<f64>,
    /// hidden_width x input_dim, row-major
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl MlpParams {
    /// All-zero weights and identity standardization.
    pub fn zeros(input_dim: usize, hidden_width: usize) -> Self {
        Self {
            input_dim,
            hidden_width,
            input_mean: vec![0.0; input_dim],
            input_scale: vec![1.0; input_dim],
            w1: vec![0.0; hidden_width * input_dim],
            b1: vec![0.0; hidden_width],
            w2: vec![0.0; hidden_width],
            b2: vec![0.0],
        }
    }

    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for every weight and bias.
    pub fn init(input_dim: usize, hidden_width: usize, seed: u64) -> Self {
        let mut rng = rng_for(seed, 0x4D4C50);
        let mut p = Self::zeros(input_dim, hidden_width);
        let b = 1.0 / (input_dim as f64).sqrt();
        p.w1.iter_mut().chain(&mut p.b1).for_each(|w| *w = rng.random_range(-b..b));
        let b = 1.0 / (hidden_width as f64).sqrt();
        p.w2.iter_mut().chain(&mut p.b2).for_each(|w| *w = rng.random_range(-b..b));
        p
    }

    fn standardize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.input_mean)
            .zip(&self.input_scale)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }

    /// Returns (standardized input, pre-activations, logit).
    fn forward(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>, f64) {
        let z = self.standardize(x);
        let p = self.input_dim;
        let pre: Vec<f64> = (0..self.hidden_width)
            .map(|j| self.b1[j] + self.w1[j * p..(j + 1) * p].iter().zip(&z).map(|(w, v)| w * v).sum::<f64>())
            .collect();
        let logit = self.b2[0] + pre.iter().zip(&self.w2).map(|(h, w)| gelu(*h) * w).sum::<f64>();
        (z, pre, logit)
    }

    pub fn logit(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.input_dim {
            return Err(Error::DimMismatch {
                expected: self.input_dim,
                found: x.len(),
            });
        }
        Ok(self.forward(x).2)
    }

    fn groups_mut<'a>(&'a mut self, g: &'a MlpGrads) -> [(&'a mut [f64], &'a [f64]); 4] {
        [
            (&mut self.w1[..], &g.w1[..]),
            (&mut self.b1[..], &g.b1[..]),
            (&mut self.w2[..], &g.w2[..]),
            (&mut self.b2[..], &g.b2[..]),
        ]
    }

    fn sizes(&self) -> [usize; 4] {
        [self.w1.len(), self.b1.len(), self.w2.len(), 1]
    }
}

pub fn predict_mlp(params: &MlpParams, x: &[f64]) -> Result<f64> {
    Ok(sigmoid(params.logit(x)?))
}

/// Mean binary cross-entropy over the batch and its gradient.
pub fn mlp_loss_and_grad(params: &MlpParams, x: &[Vec<f64>], y: &[u8]) -> (f64, MlpGrads) {
    let (h, p) = (params.hidden_width, params.input_dim);
    let mut g = MlpGrads {
        w1: vec![0.0; h * p],
        b1: vec![0.0; h],
        w2: vec![0.0; h],
        b2: vec![0.0],
    };
    let inv_n = 1.0 / x.len() as f64;
    let mut loss = 0.0;
    for (row, &label) in x.iter().zip(y) {
        let (z, pre, logit) = params.forward(row);
        let t = label as f64;
        loss += bce_with_logits(logit, t) * inv_n;
        let dlogit = (sigmoid(logit) - t) * inv_n;
        g.b2[0] += dlogit;
        for j in 0..h {
            g.w2[j] += dlogit * gelu(pre[j]);
            let dpre = dlogit * params.w2[j] * gelu_grad(pre[j]);
            g.b1[j] += dpre;
            for (k, zk) in z.iter().enumerate() {
                g.w1[j * p + k] += dpre * zk;
            }
        }
    }
    (loss, g)
}

pub(crate) fn accuracy(params: &MlpParams, x: &[Vec<f64>], y: &[u8]) -> f64 {
    let correct = x
        .iter()
        .zip(y)
        .filter(|(row, &t)| ((params.forward(row).2 >= 0.0) as u8) == t)
        .count();
    correct as f64 / x.len() as f64
}

/// Trains with an internal stratified validation holdout of
/// `config.validation_fraction` when both classes can spare two rows;
/// otherwise trains for the full epoch budget without early stopping.
pub fn fit_mlp(x: &[Vec<f64>], y: &[u8], config: &FitConfig) -> Result<MlpParams> {
    check_input(x, y)?;
    let mut by_class: [Vec<usize>; 2] = Default::default();
    for (i, &t) in y.iter().enumerate() {
        by_class[t as usize].push(i);
    }
    let mut rng = rng_for(config.seed, 0x484F4C44);
    let mut val_idx = Vec::new();
    if config.validation_fraction > 0.0 && by_class.iter().all(|c| c.len() >= 4) {
        for c in &mut by_class {
            c.shuffle(&mut rng);
            let k = ((c.len() as f64 * config.validation_fraction).round() as usize).clamp(1, c.len() - 2);
            val_idx.extend_from_slice(&c[..k]);
        }
    }
    if val_idx.is_empty() {
        return fit_mlp_with_validation(x, y, None, config).map(|(p, _)| p);
    }
    val_idx.sort_unstable();
    let mut is_val = vec![false; x.len()];
    val_idx.iter().for_each(|&i| is_val[i] = true);
    let pick = |want: bool| -> (Vec<Vec<f64>>, Vec<u8>) {
        (0..x.len()).filter(|&i| is_val[i] == want).map(|i| (x[i].clone(), y[i])).unzip()
    };
    let (tx, ty) = pick(false);
    let (vx, vy) = pick(true);
    fit_mlp_with_validation(&tx, &ty, Some((&vx, &vy)), config).map(|(p, _)| p)
}

/// Mini-batch AdamW on binary cross-entropy. With a validation set, the
/// parameters of the best validation-accuracy epoch are returned and training
/// stops after `config.patience` epochs without improvement.
pub fn fit_mlp_with_validation(
    x: &[Vec<f64>],
    y: &[u8],
    val: Option<(&[Vec<f64>], &[u8])>,
    config: &FitConfig,
) -> Result<(MlpParams, Vec<EpochRecord>)> {
    let p = check_input(x, y)?;
    if config.mlp_hidden_width == 0 || config.batch_size == 0 {
        return Err(Error::InvalidConfig("hidden width and batch size must be positive".into()));
    }
    let mut params = MlpParams::init(p, config.mlp_hidden_width, config.seed);
    for k in 0..p {
        let mean = x.iter().map(|r| r[k]).sum::<f64>() / x.len() as f64;
        let var = x.iter().map(|r| (r[k] - mean).powi(2)).sum::<f64>() / x.len() as f64;
        params.input_mean[k] = mean;
        params.input_scale[k] = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
    }
    let mut opt = AdamW::new(
        AdamWConfig {
            weight_decay: config.weight_decay,
            ..AdamWConfig::with_lr(config.learning_rate)
        },
        params.sizes(),
    );
    let mut rng = rng_for(config.seed, 0x5348554646);
    let mut order: Vec<usize> = (0..x.len()).collect();
    let mut history = Vec::new();
    let mut best: Option<(f64, MlpParams)> = None;
    let mut best_epoch = 0;
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let bx: Vec<Vec<f64>> = chunk.iter().map(|&i| x[i].clone()).collect();
            let by: Vec<u8> = chunk.iter().map(|&i| y[i]).collect();
            let (loss, grads) = mlp_loss_and_grad(&params, &bx, &by);
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, loss });
            }
            epoch_loss += loss * chunk.len() as f64;
            opt.step(params.groups_mut(&grads));
        }
        let val_accuracy = val.map(|(vx, vy)| accuracy(&params, vx, vy));
        history.push(EpochRecord {
            epoch,
            train_loss: epoch_loss / x.len() as f64,
            train_accuracy: accuracy(&params, x, y),
            val_accuracy,
        });
        if let Some(acc) = val_accuracy {
            if best.as_ref().is_none_or(|(b, _)| acc > *b) {
                best = Some((acc, params.clone()));
                best_epoch = epoch;
            } else if epoch - best_epoch >= config.patience {
                break;
            }
        }
    }
    Ok((best.map(|(_, p)| p).unwrap_or(params), history))
}
