//! Class-weighted reconstruction loss and the two weighting schemes.

use std::fmt;
use std::str::FromStr;

use gridwise_core::dataset::ClassCounts;
use gridwise_core::CellClass;
use serde::{Deserialize, Serialize};

use crate::error::{NnError, NnResult};
use crate::model::head_to_prob;
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    /// `alpha = 1 - B_c / B`.
    InverseRatio,
    /// `alpha = 1 / B_c`: every present class contributes its own mean squared error.
    Independent,
}

impl Scheme {
    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::InverseRatio => "inverse-ratio",
            Scheme::Independent => "independent",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "inverse-ratio" => Ok(Scheme::InverseRatio),
            "independent" => Ok(Scheme::Independent),
            _ => Err(format!("unknown scheme {s:?} (expected inverse-ratio or independent)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub scheme: Scheme,
    /// L2 coefficient on convolution weights.
    pub lambda: f64,
    /// Class threshold on label log-odds.
    pub tau: f64,
}

impl LossConfig {
    pub fn new(scheme: Scheme) -> Self {
        LossConfig {
            scheme,
            lambda: 1e-4,
            tau: gridwise_core::dataset::DEFAULT_TAU,
        }
    }

    pub fn validate(&self) -> NnResult<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) || !(self.tau >= 0.0 && self.tau.is_finite()) {
            return Err(NnError::InvalidConfig(format!("{self:?}")));
        }
        Ok(())
    }
}

fn check_counts(counts: &ClassCounts) -> NnResult<()> {
    if counts.total == 0 || !counts.is_consistent() {
        return Err(NnError::DegenerateCounts(format!("{counts:?}")));
    }
    Ok(())
}

/// Per-class weights indexed by [`CellClass::index`].
pub fn class_weights(scheme: Scheme, counts: &ClassCounts) -> NnResult<[f64; 3]> {
    check_counts(counts)?;
    let b = counts.total as f64;
    Ok(CellClass::ALL.map(|c| {
        let bc = counts.get(c) as f64;
        match scheme {
            Scheme::InverseRatio => 1.0 - bc / b,
            Scheme::Independent if bc == 0.0 => 0.0,
            Scheme::Independent => 1.0 / bc,
        }
    }))
}

fn per_pixel(weights: [f64; 3], counts: &ClassCounts, classes: &[CellClass]) -> NnResult<Vec<f64>> {
    if classes.len() != counts.total {
        return Err(NnError::DegenerateCounts(format!(
            "{} label pixels but counts total {}",
            classes.len(),
            counts.total
        )));
    }
    Ok(classes.iter().map(|c| weights[c.index()]).collect())
}

pub fn weights_inverse_class_ratio(counts: &ClassCounts, classes: &[CellClass]) -> NnResult<Vec<f64>> {
    per_pixel(class_weights(Scheme::InverseRatio, counts)?, counts, classes)
}

pub fn weights_independent_class_mse(counts: &ClassCounts, classes: &[CellClass]) -> NnResult<Vec<f64>> {
    per_pixel(class_weights(Scheme::Independent, counts)?, counts, classes)
}

pub fn pixel_weights(scheme: Scheme, counts: &ClassCounts, classes: &[CellClass]) -> NnResult<Vec<f64>> {
    per_pixel(class_weights(scheme, counts)?, counts, classes)
}

/// `sum_i alpha_i (pred_i - label_i)^2 + lambda sum_j w_j^2` and its gradient
/// with respect to `pred`.
pub fn weighted_loss<T: Real>(pred: &[T], label: &[T], alpha: &[T], params: &[&[T]], lambda: T) -> NnResult<(T, Vec<T>)> {
    if pred.len() != label.len() || pred.len() != alpha.len() {
        return Err(NnError::ShapeMismatch(format!(
            "pred {}, label {}, weights {}",
            pred.len(),
            label.len(),
            alpha.len()
        )));
    }
    let two = T::of(2.0);
    let mut loss = T::zero();
    let mut grad = Vec::with_capacity(pred.len());
    for ((&p, &y), &a) in pred.iter().zip(label).zip(alpha) {
        let d = p - y;
        loss += a * d * d;
        grad.push(two * a * d);
    }
    let l2: T = params.iter().flat_map(|w| w.iter()).map(|&w| w * w).sum();
    Ok((loss + lambda * l2, grad))
}

/// Running squared-error sums per label class.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ClassErrors {
    pub sq: [f64; 3],
    pub n: [usize; 3],
}

impl ClassErrors {
    pub fn add(&mut self, class: CellClass, pred: f64, label: f64) {
        let d = pred - label;
        self.sq[class.index()] += d * d;
        self.n[class.index()] += 1;
    }

    pub fn merge(&mut self, o: &ClassErrors) {
        for i in 0..3 {
            self.sq[i] += o.sq[i];
            self.n[i] += o.n[i];
        }
    }

    /// Mean squared error per class; `None` for classes never seen.
    pub fn mse(&self) -> [Option<f64>; 3] {
        [0, 1, 2].map(|i| (self.n[i] > 0).then(|| self.sq[i] / self.n[i] as f64))
    }
}

/// Data term of a minibatch, computed on logits.
#[derive(Debug, Clone)]
pub struct BatchLoss<T> {
    /// Mean over samples of each sample's weighted squared error.
    pub loss: T,
    /// Gradient of `loss` with respect to the logits.
    pub grad: Tensor<T>,
    pub errors: ClassErrors,
}

/// Loss of logits against labels in the `[-1, 1]` scale, with predictions
/// `tanh(logit / 2)`. `alpha` holds per-pixel weights, `classes` the label
/// class of every pixel (used for error bookkeeping only).
pub fn batch_loss<T: Real>(logits: &Tensor<T>, labels: &Tensor<T>, alpha: &Tensor<T>, classes: &[CellClass]) -> NnResult<BatchLoss<T>> {
    if logits.shape != labels.shape || logits.shape != alpha.shape || classes.len() != logits.data.len() {
        return Err(NnError::ShapeMismatch(format!(
            "logits {:?}, labels {:?}, weights {:?}",
            logits.shape, labels.shape, alpha.shape
        )));
    }
    let inv_n = T::one() / T::of(logits.batch().max(1) as f64);
    let mut grad = Tensor::zeros(logits.shape);
    let mut loss = T::zero();
    let mut errors = ClassErrors::default();
    for i in 0..logits.data.len() {
        let p = head_to_prob(logits.data[i]);
        let d = p - labels.data[i];
        let a = alpha.data[i];
        loss += a * d * d;
        // d/dl tanh(l/2) = (1 - p^2) / 2
        grad.data[i] = inv_n * a * d * (T::one() - p * p);
        errors.add(classes[i], p.f64(), labels.data[i].f64());
    }
    Ok(BatchLoss {
        loss: loss * inv_n,
        grad,
        errors,
    })
}
