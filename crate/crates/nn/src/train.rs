//! Minibatch Adam training with on-the-fly symmetry augmentation.

use std::path::Path;

use gridwise_core::dataset::{augment, label_classes, PatchPair};
use gridwise_core::rng;
use gridwise_core::CellClass;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{NnError, NnResult};
use crate::loss::{batch_loss, class_weights, ClassErrors, LossConfig};
use crate::model::{AeModel, Mode};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub augment: bool,
    /// Re-estimate batch-norm statistics with the final weights over the
    /// unaugmented training pairs once training ends.
    pub recalibrate_bn: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 16,
            learning_rate: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            augment: true,
            recalibrate_bn: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> NnResult<()> {
        let ok = self.batch_size >= 2
            && self.learning_rate >= 0.0
            && self.learning_rate.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.adam_eps > 0.0;
        if !ok {
            return Err(NnError::InvalidConfig(format!("{self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub free_mse: Option<f64>,
    pub unknown_mse: Option<f64>,
    pub occupied_mse: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// The trained model, or the last finite state if training diverged.
    pub model: AeModel<f32>,
    pub curve: Vec<EpochStats>,
    pub diverged: Option<(usize, usize)>,
}

impl TrainOutcome {
    pub fn check(&self) -> NnResult<()> {
        match self.diverged {
            Some((epoch, step)) => Err(NnError::Divergence { epoch, step }),
            None => Ok(()),
        }
    }
}

pub fn write_curve_csv(curve: &[EpochStats], path: impl AsRef<Path>) -> NnResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| NnError::Io(e.into()))?;
    for s in curve {
        w.serialize(s).map_err(|e| NnError::Io(e.into()))?;
    }
    w.flush()?;
    Ok(())
}

struct Adam {
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
    t: i32,
}

impl Adam {
    fn new(model: &AeModel<f32>) -> Self {
        let zeros: Vec<Vec<f32>> = model.params().iter().map(|(_, p)| vec![0.0; p.len()]).collect();
        Adam {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    fn step(&mut self, model: &mut AeModel<f32>, cfg: &TrainConfig) {
        self.t += 1;
        let (b1, b2) = (cfg.beta1 as f32, cfg.beta2 as f32);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        let lr = cfg.learning_rate as f32;
        let eps = cfg.adam_eps as f32;
        for (((_, p), m), v) in model.params_mut().into_iter().zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.value.len() {
                let g = p.grad[i];
                m[i] = b1 * m[i] + (1.0 - b1) * g;
                v[i] = b2 * v[i] + (1.0 - b2) * g * g;
                p.value[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
            }
        }
    }
}

/// Splits a shuffled order into batches; a lone leftover sample joins the
/// previous batch, and a single-sample set is paired with itself so batch
/// statistics stay defined.
fn batches(order: &[usize], size: usize) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = order.chunks(size).map(|c| c.to_vec()).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() == 1) {
        let last = out.pop().unwrap();
        out.last_mut().unwrap().extend(last);
    }
    if let Some(b) = out.first_mut() {
        if b.len() == 1 {
            b.push(b[0]);
        }
    }
    out
}

/// Trains `model` on `pairs`. Per-pixel weights come from each sample's own
/// class counts. Deterministic for a fixed `cfg.seed`.
pub fn train(mut model: AeModel<f32>, pairs: &[PatchPair], loss_cfg: &LossConfig, cfg: &TrainConfig) -> NnResult<TrainOutcome> {
    cfg.validate()?;
    loss_cfg.validate()?;
    if pairs.is_empty() {
        return Err(NnError::EmptyDataset);
    }
    let side = pairs[0].side;
    if pairs.iter().any(|p| p.side != side) {
        return Err(NnError::ShapeMismatch("pairs of different sides".into()));
    }
    model.config.check_side(side)?;
    let weights: Vec<[f64; 3]> = pairs
        .iter()
        .map(|p| class_weights(loss_cfg.scheme, &p.counts))
        .collect::<NnResult<_>>()?;

    let px = side * side;
    let mut adam = Adam::new(&model);
    let mut snapshot = model.clone();
    let mut curve = Vec::with_capacity(cfg.epochs);
    let lambda = loss_cfg.lambda as f32;
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        order.shuffle(&mut rng::stream(cfg.seed, &[1, epoch as u64]));
        let mut errors = ClassErrors::default();
        let (mut loss_sum, mut seen) = (0.0f64, 0usize);
        for (step, batch) in batches(&order, cfg.batch_size).into_iter().enumerate() {
            let n = batch.len();
            let mut x = Tensor::zeros([n, 1, side, side]);
            let mut y = Tensor::zeros([n, 1, side, side]);
            let mut a = Tensor::zeros([n, 1, side, side]);
            let mut classes: Vec<CellClass> = Vec::with_capacity(n * px);
            for (slot, &idx) in batch.iter().enumerate() {
                let pair = if cfg.augment {
                    augment(&pairs[idx], &mut rng::stream(cfg.seed, &[2, epoch as u64, idx as u64]))
                } else {
                    pairs[idx].clone()
                };
                x.sample_mut(slot).copy_from_slice(&pair.input);
                y.sample_mut(slot).copy_from_slice(&pair.label);
                let cls = label_classes(&pair.label, loss_cfg.tau);
                for (w, c) in a.sample_mut(slot).iter_mut().zip(&cls) {
                    *w = weights[idx][c.index()] as f32;
                }
                classes.extend(cls);
            }
            model.zero_grad();
            let logits = model.forward(&x, Mode::Train)?;
            let bl = batch_loss(&logits, &y, &a, &classes)?;
            let total = bl.loss as f64 + loss_cfg.lambda * model.l2_penalty() as f64;
            if !total.is_finite() || !logits.is_finite() {
                return Ok(TrainOutcome {
                    model: snapshot,
                    curve,
                    diverged: Some((epoch, step)),
                });
            }
            model.backward(&bl.grad)?;
            model.add_l2_grad(lambda);
            snapshot.clone_from(&model);
            adam.step(&mut model, cfg);
            if !model.all_finite() {
                return Ok(TrainOutcome {
                    model: snapshot,
                    curve,
                    diverged: Some((epoch, step)),
                });
            }
            errors.merge(&bl.errors);
            loss_sum += total * n as f64;
            seen += n;
        }
        let [free_mse, unknown_mse, occupied_mse] = errors.mse();
        curve.push(EpochStats {
            epoch,
            loss: loss_sum / seen as f64,
            free_mse,
            unknown_mse,
            occupied_mse,
        });
    }
    if cfg.recalibrate_bn {
        let order: Vec<usize> = (0..pairs.len()).collect();
        let inputs = batches(&order, cfg.batch_size).into_iter().map(|batch| {
            let mut x = Tensor::zeros([batch.len(), 1, side, side]);
            for (slot, &idx) in batch.iter().enumerate() {
                x.sample_mut(slot).copy_from_slice(&pairs[idx].input);
            }
            x
        });
        model.recalibrate_bn(inputs)?;
    }
    Ok(TrainOutcome {
        model,
        curve,
        diverged: None,
    })
}
