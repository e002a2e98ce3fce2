use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::AitrConfig;
use super::model::{forward, loss_and_grad, AitrInput};
use super::params::AitrParams;
use crate::data::{Dataset, Label};
use crate::error::{Error, Result};
use crate::features::rerank_evidence;
use crate::optim::{AdamW, AdamWConfig, EpochRecord};
use crate::rng::rng_for;

/// Model inputs for every sample of `dataset`, in dataset order.
pub fn prepare_inputs(dataset: &Dataset) -> Result<Vec<AitrInput>> {
    dataset
        .samples()
        .par_iter()
        .map(|s| AitrInput::from_sample(s, &rerank_evidence(s)).map_err(|e| e.in_sample(&s.id)))
        .collect()
}

/// Binary targets: 0 for truthful pairs, 1 for any falsified class.
pub fn binary_labels(labels: &[Label]) -> Vec<u8> {
    labels.iter().map(|&l| (l != Label::Truthful) as u8).collect()
}

/// Inputs and binary targets of one split.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub inputs: Vec<AitrInput>,
    pub labels: Vec<u8>,
}

impl TrainingSet {
    pub fn from_dataset(dataset: &Dataset) -> Result<Self> {
        Ok(Self {
            inputs: prepare_inputs(dataset)?,
            labels: binary_labels(&dataset.labels()),
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

/// Class-1 probabilities, evaluated in chunks of `batch_size`.
pub fn predict_proba(params: &AitrParams, inputs: &[AitrInput]) -> Result<Vec<f64>> {
    let size = params.config.batch_size.max(1);
    let mut out = Vec::with_capacity(inputs.len());
    for chunk in inputs.chunks(size) {
        out.extend(forward(params, chunk)?.logits.into_iter().map(crate::tabular::sigmoid));
    }
    Ok(out)
}

pub fn accuracy(params: &AitrParams, set: &TrainingSet) -> Result<f64> {
    let probs = predict_proba(params, &set.inputs)?;
    let hits = probs
        .iter()
        .zip(&set.labels)
        .filter(|(&p, &y)| (p >= 0.5) as u8 == y)
        .count();
    Ok(hits as f64 / set.len().max(1) as f64)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best validation accuracy.
    pub params: AitrParams,
    pub history: Vec<EpochRecord>,
    /// 1-based epoch of the kept checkpoint (0 if no epoch ran).
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
}

/// Mini-batch AdamW on mean binary cross-entropy with early stopping on
/// validation accuracy. Returns the best checkpoint.
pub fn train(train_set: &TrainingSet, val_set: &TrainingSet, config: &AitrConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::EmptyInput);
    }
    for input in train_set.inputs.iter().chain(&val_set.inputs) {
        if input.dim() != config.dim {
            return Err(Error::DimMismatch {
                expected: config.dim,
                found: input.dim(),
            });
        }
    }
    let mut params = AitrParams::init(config)?;
    let opt_config = AdamWConfig {
        lr: config.lr,
        weight_decay: config.weight_decay,
        ..AdamWConfig::default()
    };
    let mut opt = AdamW::new(opt_config, params.tensors().iter().map(|t| t.len()));
    let mut shuffle_rng = rng_for(config.seed, 0x5A0F);
    let mut dropout_rng = rng_for(config.seed, 0xD809);

    let mut best = (params.clone(), 0, accuracy(&params, val_set)?);
    let mut history = Vec::new();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut shuffle_rng);
        let (mut loss_sum, mut hits) = (0.0, 0usize);
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<AitrInput> = chunk.iter().map(|&i| train_set.inputs[i].clone()).collect();
            let labels: Vec<u8> = chunk.iter().map(|&i| train_set.labels[i]).collect();
            let (loss, logits, grads) = match loss_and_grad(&params, &batch, &labels, Some(&mut dropout_rng)) {
                Ok(v) => v,
                Err(Error::NonFiniteActivation(_)) => return Err(Error::Diverged { epoch, loss: f64::NAN }),
                Err(e) => return Err(e),
            };
            if !loss.is_finite() || !grads.is_finite() {
                return Err(Error::Diverged { epoch, loss });
            }
            loss_sum += loss * chunk.len() as f64;
            hits += logits.iter().zip(&labels).filter(|(&z, &y)| (z >= 0.0) as u8 == y).count();
            let groups = params
                .tensors_mut()
                .iter_mut()
                .zip(grads.tensors())
                .map(|(p, g)| (&mut p.data[..], &g.data[..]));
            opt.step(groups);
        }
        if !params.is_finite() {
            return Err(Error::Diverged { epoch, loss: f64::NAN });
        }
        let val_accuracy = match accuracy(&params, val_set) {
            Ok(v) => v,
            Err(Error::NonFiniteActivation(_)) => return Err(Error::Diverged { epoch, loss: f64::NAN }),
            Err(e) => return Err(e),
        };
        history.push(EpochRecord {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            train_accuracy: hits as f64 / train_set.len() as f64,
            val_accuracy: Some(val_accuracy),
        });
        if val_accuracy > best.2 {
            best = (params.clone(), epoch, val_accuracy);
        } else if epoch - best.1 >= config.patience {
            break;
        }
    }
    Ok(TrainOutcome {
        params: best.0,
        history,
        best_epoch: best.1,
        best_val_accuracy: best.2,
    })
}

/// One trained grid cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub label: String,
    pub config: AitrConfig,
    pub val_accuracy: Option<f64>,
    pub best_epoch: Option<usize>,
    /// Set when training this cell failed.
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct GridOutcome {
    pub cells: Vec<GridCell>,
    /// Index into `cells` of the winning configuration.
    pub best: usize,
    pub best_outcome: TrainOutcome,
}

/// Trains every configuration and keeps the one with the highest validation
/// accuracy (first in grid order on ties). Failed cells are recorded and
/// skipped.
pub fn grid_search(train_set: &TrainingSet, val_set: &TrainingSet, grid: &[AitrConfig]) -> Result<GridOutcome> {
    if grid.is_empty() {
        return Err(Error::InvalidConfig("empty grid".into()));
    }
    let mut cells = Vec::with_capacity(grid.len());
    let mut best: Option<(usize, TrainOutcome)> = None;
    let mut last_err = None;
    for (i, config) in grid.iter().enumerate() {
        let mut cell = GridCell {
            label: config.label(),
            config: config.clone(),
            val_accuracy: None,
            best_epoch: None,
            error: None,
        };
        match train(train_set, val_set, config) {
            Ok(outcome) => {
                cell.val_accuracy = Some(outcome.best_val_accuracy);
                cell.best_epoch = Some(outcome.best_epoch);
                if best.as_ref().is_none_or(|(_, b)| outcome.best_val_accuracy > b.best_val_accuracy) {
                    best = Some((i, outcome));
                }
            }
            Err(e) => {
                cell.error = Some(e.to_string());
                last_err = Some(e);
            }
        }
        cells.push(cell);
    }
    match best {
        Some((best, best_outcome)) => Ok(GridOutcome {
            cells,
            best,
            best_outcome,
        }),
        None => Err(last_err.expect("at least one cell failed")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aitr::Pooling;
    use crate::data::{generate_synthetic, split_dataset, Preset};

    fn small(pooling: Pooling) -> AitrConfig {
        AitrConfig {
            n_layers: 2,
            heads: vec![1, 2],
            ff_width: 32,
            dim: 16,
            pooling,
            lr: 1e-3,
            batch_size: 32,
            max_epochs: 8,
            patience: 3,
            ..AitrConfig::default()
        }
    }

    fn sets() -> (TrainingSet, TrainingSet) {
        let ds = generate_synthetic(&Preset::NewsClippings.config(500, 16, 1)).unwrap();
        let (tr, va, _) = split_dataset(&ds, [0.6, 0.3, 0.1], 0).unwrap();
        (TrainingSet::from_dataset(&tr).unwrap(), TrainingSet::from_dataset(&va).unwrap())
    }

    #[test]
    fn learns_and_is_deterministic() {
        let (tr, va) = sets();
        let cfg = AitrConfig {
            max_epochs: 12,
            patience: 5,
            ..small(Pooling::Attention)
        };
        let a = train(&tr, &va, &cfg).unwrap();
        assert!(a.best_val_accuracy > 0.7, "val accuracy {}", a.best_val_accuracy);
        assert!(a.history[0].train_loss.is_finite());
        let b = train(&tr, &va, &cfg).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.history, b.history);
        assert_eq!(accuracy(&a.params, &va).unwrap(), a.best_val_accuracy);
    }

    #[test]
    fn early_stopping_respects_patience() {
        let (tr, va) = sets();
        // lr so small that validation accuracy barely moves
        let cfg = AitrConfig {
            lr: 1e-9,
            max_epochs: 50,
            patience: 2,
            ..small(Pooling::None)
        };
        let out = train(&tr, &va, &cfg).unwrap();
        assert!(out.history.len() <= out.best_epoch + cfg.patience);
        assert!(out.history.len() < 50);
    }

    #[test]
    fn grid_skips_diverging_cell() {
        let (tr, va) = sets();
        let good = AitrConfig {
            max_epochs: 2,
            ..small(Pooling::Attention)
        };
        let bad = AitrConfig { lr: 1e300, ..good.clone() };
        let out = grid_search(&tr, &va, &[bad, good.clone()]).unwrap();
        assert!(out.cells[0].error.is_some(), "{:?}", out.cells[0]);
        assert_eq!(out.best, 1);
        let single = grid_search(&tr, &va, std::slice::from_ref(&good)).unwrap();
        assert_eq!(single.best, 0);
        assert_eq!(single.cells[0].config, good);
    }

    #[test]
    fn rejects_wrong_dim() {
        let (tr, va) = sets();
        let cfg = AitrConfig { dim: 8, ..small(Pooling::Max) };
        assert!(matches!(train(&tr, &va, &cfg), Err(Error::DimMismatch { .. })));
    }
}
