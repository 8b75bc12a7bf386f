mod common;

use gridwise_nn::gradcheck::{gradient_check, Coverage, LossInputs};
use gridwise_nn::loss::batch_loss;
use gridwise_nn::{AeModel, Mode, ModelConfig, Tensor};

fn alpha_for(classes: &[gridwise_core::CellClass], w: [f64; 3], shape: [usize; 4]) -> Tensor<f64> {
    Tensor::from_vec(shape, classes.iter().map(|c| w[c.index()]).collect()).unwrap()
}

#[test]
fn tiny_model_every_parameter() {
    let shape = [2, 1, 8, 8];
    let x = common::random_batch(shape, 1);
    let (y, classes) = common::random_labels(shape, 2);
    for (w, lambda) in [([0.5, 0.7, 0.8], 1e-3), ([0.05, 0.1, 0.5], 0.0)] {
        let mut model = AeModel::<f64>::new(ModelConfig::TINY, 3).unwrap();
        // larger weights than the default init so every path carries signal
        for (_, p) in model.params_mut() {
            if p.decay {
                p.value.iter_mut().for_each(|v| *v *= 15.0);
            }
        }
        let alpha = alpha_for(&classes, w, shape);
        let inp = LossInputs {
            batch: &x,
            labels: &y,
            alpha: &alpha,
            classes: &classes,
            lambda,
        };
        let r = gradient_check(&mut model, &inp, Coverage::All).unwrap();
        assert!(r.checked >= model.param_count() * 9 / 10, "{r:?}");
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }
}

#[test]
fn regularizer_only_gradient() {
    let shape = [2, 1, 8, 8];
    let x = common::random_batch(shape, 4);
    let (y, classes) = common::random_labels(shape, 5);
    let alpha = Tensor::zeros(shape);
    let lambda = 0.37;
    let mut model = AeModel::<f64>::new(ModelConfig::TINY, 6).unwrap();
    let logits = model.forward(&x, Mode::Train).unwrap();
    let bl = batch_loss(&logits, &y, &alpha, &classes).unwrap();
    assert_eq!(bl.loss, 0.0);
    model.backward(&bl.grad).unwrap();
    model.add_l2_grad(lambda);
    for (name, p) in model.params() {
        for (g, w) in p.grad.iter().zip(&p.value) {
            let expect = if p.decay { 2.0 * lambda * w } else { 0.0 };
            assert_eq!(*g, expect, "{name}");
        }
    }
}

#[test]
fn duplicated_sample_gets_identical_gradients() {
    let one = common::random_batch([1, 1, 8, 8], 7);
    let x = Tensor::from_vec([2, 1, 8, 8], [one.data.clone(), one.data.clone()].concat()).unwrap();
    let (y1, c1) = common::random_labels([1, 1, 8, 8], 8);
    let y = Tensor::from_vec([2, 1, 8, 8], [y1.data.clone(), y1.data.clone()].concat()).unwrap();
    let classes = [c1.clone(), c1].concat();
    let alpha = alpha_for(&classes, [0.5, 0.7, 0.8], [2, 1, 8, 8]);
    let mut model = AeModel::<f64>::new(ModelConfig::TINY, 9).unwrap();
    let logits = model.forward(&x, Mode::Train).unwrap();
    assert_eq!(logits.sample(0), logits.sample(1));
    let bl = batch_loss(&logits, &y, &alpha, &classes).unwrap();
    assert_eq!(bl.grad.sample(0), bl.grad.sample(1));
    let dx = model.backward(&bl.grad).unwrap();
    for (a, b) in dx.sample(0).iter().zip(dx.sample(1)) {
        assert!((a - b).abs() <= 1e-15 * a.abs().max(1e-300), "{a} vs {b}");
    }
}
