//! Central finite-difference verification of analytic gradients.

use gridwise_core::CellClass;
use rand::seq::index::sample;

use crate::error::NnResult;
use crate::layers::Param;
use crate::loss::batch_loss;
use crate::model::{AeModel, Mode};
use crate::tensor::Tensor;

pub const STEP: f64 = 1e-4;
/// Gradients smaller than this are compared absolutely.
pub const REL_FLOOR: f64 = 1e-4;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates where the perturbation moved an activation across the
    /// LeakyReLU kink; finite differences are meaningless there.
    pub skipped: usize,
    pub worst: Option<(String, usize)>,
}

/// Which coordinates of each parameter tensor to check.
#[derive(Debug, Clone, Copy)]
pub enum Coverage {
    All,
    /// Up to this many randomly chosen coordinates per tensor.
    Sampled { per_tensor: usize, seed: u64 },
}

/// Everything the full-model loss needs besides the parameters.
pub struct LossInputs<'a> {
    pub batch: &'a Tensor<f64>,
    pub labels: &'a Tensor<f64>,
    pub alpha: &'a Tensor<f64>,
    pub classes: &'a [CellClass],
    pub lambda: f64,
}

fn model_loss(model: &mut AeModel<f64>, inp: &LossInputs) -> NnResult<f64> {
    let logits = model.forward(inp.batch, Mode::Train)?;
    let bl = batch_loss(&logits, inp.labels, inp.alpha, inp.classes)?;
    Ok(bl.loss + inp.lambda * model.l2_penalty())
}

/// Compares the training loss gradient against central differences.
pub fn gradient_check(model: &mut AeModel<f64>, inp: &LossInputs, coverage: Coverage) -> NnResult<GradCheckReport> {
    model.zero_grad();
    let logits = model.forward(inp.batch, Mode::Train)?;
    let base_signs = model.activation_signs();
    let bl = batch_loss(&logits, inp.labels, inp.alpha, inp.classes)?;
    model.backward(&bl.grad)?;
    model.add_l2_grad(inp.lambda);

    let analytic: Vec<(String, Vec<f64>)> = model.params().into_iter().map(|(n, p)| (n, p.grad.clone())).collect();
    let mut report = GradCheckReport::default();
    let mut rng = gridwise_core::rng::stream(
        match coverage {
            Coverage::Sampled { seed, .. } => seed,
            Coverage::All => 0,
        },
        &[0x6C],
    );
    for (t, (name, grads)) in analytic.iter().enumerate() {
        let coords: Vec<usize> = match coverage {
            Coverage::All => (0..grads.len()).collect(),
            Coverage::Sampled { per_tensor, .. } if per_tensor >= grads.len() => (0..grads.len()).collect(),
            Coverage::Sampled { per_tensor, .. } => sample(&mut rng, grads.len(), per_tensor).into_vec(),
        };
        for i in coords {
            let orig = model.params()[t].1.value[i];
            let eval = |m: &mut AeModel<f64>, v: f64| -> NnResult<(f64, bool)> {
                m.params_mut()[t].1.value[i] = v;
                let l = model_loss(m, inp)?;
                Ok((l, m.activation_signs() == base_signs))
            };
            let (plus, same_p) = eval(model, orig + STEP)?;
            let (minus, same_m) = eval(model, orig - STEP)?;
            model.params_mut()[t].1.value[i] = orig;
            if !(same_p && same_m) {
                report.skipped += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * STEP);
            let err = relative_error(grads[i], numeric);
            report.checked += 1;
            if err >= report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((name.clone(), i));
            }
        }
    }
    Ok(report)
}

/// Max relative error of the input and parameter gradients of `sum(r * layer(x))`,
/// checking every coordinate.
pub fn check_layer<L: Clone>(
    layer: &L,
    x: &Tensor<f64>,
    r: &Tensor<f64>,
    fwd: impl Fn(&mut L, &Tensor<f64>) -> Tensor<f64>,
    bwd: impl Fn(&mut L, &Tensor<f64>) -> Tensor<f64>,
    params: impl Fn(&mut L) -> Vec<&mut Param<f64>>,
) -> f64 {
    let mut l = layer.clone();
    fwd(&mut l, x);
    let dx = bwd(&mut l, r);
    let pgrads: Vec<Vec<f64>> = params(&mut l).into_iter().map(|p| p.grad.clone()).collect();
    let objective = |l: &L, x: &Tensor<f64>| fwd(&mut l.clone(), x).dot(r);
    let mut worst = 0.0f64;
    for i in 0..x.data.len() {
        let (mut xp, mut xm) = (x.clone(), x.clone());
        xp.data[i] += STEP;
        xm.data[i] -= STEP;
        let num = (objective(layer, &xp) - objective(layer, &xm)) / (2.0 * STEP);
        worst = worst.max(relative_error(dx.data[i], num));
    }
    for (t, g) in pgrads.iter().enumerate() {
        for i in 0..g.len() {
            let (mut lp, mut lm) = (layer.clone(), layer.clone());
            params(&mut lp)[t].value[i] += STEP;
            params(&mut lm)[t].value[i] -= STEP;
            let num = (objective(&lp, x) - objective(&lm, x)) / (2.0 * STEP);
            worst = worst.max(relative_error(g[i], num));
        }
    }
    worst
}
