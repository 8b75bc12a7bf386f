mod common;

use approx::assert_abs_diff_eq;
use gridwise_core::dataset::ClassCounts;
use gridwise_core::CellClass;
use gridwise_nn::loss::{
    batch_loss, class_weights, weighted_loss, weights_independent_class_mse, weights_inverse_class_ratio, Scheme,
};
use gridwise_nn::{NnError, Tensor};
use proptest::prelude::*;

fn counts(f: usize, u: usize, o: usize) -> ClassCounts {
    ClassCounts {
        free: f,
        unknown: u,
        occupied: o,
        total: f + u + o,
    }
}

#[test]
fn inverse_ratio_example() {
    let w = class_weights(Scheme::InverseRatio, &counts(5, 3, 2)).unwrap();
    assert_abs_diff_eq!(w[0], 0.5, epsilon = 1e-15);
    assert_abs_diff_eq!(w[1], 0.7, epsilon = 1e-15);
    assert_abs_diff_eq!(w[2], 0.8, epsilon = 1e-15);
    let classes = [CellClass::Free, CellClass::Occupied, CellClass::Unknown];
    let c = counts(1, 1, 1);
    assert_eq!(weights_inverse_class_ratio(&c, &classes).unwrap().len(), 3);
}

#[test]
fn single_class_gets_zero_weight() {
    let w = class_weights(Scheme::InverseRatio, &counts(0, 10, 0)).unwrap();
    assert_eq!(w[1], 0.0);
}

#[test]
fn imbalance_limit() {
    let w = class_weights(Scheme::InverseRatio, &counts(100, 100, 1)).unwrap();
    assert_abs_diff_eq!(w[0], 101.0 / 201.0, epsilon = 1e-12);
    assert_abs_diff_eq!(w[2], 200.0 / 201.0, epsilon = 1e-12);
    for (k, tol) in [(1_000usize, 1e-3), (1_000_000, 1e-6)] {
        let w = class_weights(Scheme::InverseRatio, &counts(k, k, 1)).unwrap();
        assert!((w[0] - 0.5).abs() < tol && (w[1] - 0.5).abs() < tol && (w[2] - 1.0).abs() < tol);
    }
}

#[test]
fn independent_example_and_empty_class() {
    let w = class_weights(Scheme::Independent, &counts(5, 3, 2)).unwrap();
    assert_abs_diff_eq!(w[0], 0.2, epsilon = 1e-15);
    assert_abs_diff_eq!(w[1], 1.0 / 3.0, epsilon = 1e-15);
    assert_abs_diff_eq!(w[2], 0.5, epsilon = 1e-15);
    let w = class_weights(Scheme::Independent, &counts(6, 4, 0)).unwrap();
    assert_eq!(w[2], 0.0);
    assert!(w.iter().all(|v| v.is_finite()));
}

#[test]
fn degenerate_counts() {
    assert!(matches!(class_weights(Scheme::InverseRatio, &counts(0, 0, 0)), Err(NnError::DegenerateCounts(_))));
    let bad = ClassCounts {
        free: 1,
        unknown: 1,
        occupied: 1,
        total: 4,
    };
    assert!(matches!(class_weights(Scheme::Independent, &bad), Err(NnError::DegenerateCounts(_))));
    assert!(weights_independent_class_mse(&counts(1, 1, 0), &[CellClass::Free]).is_err());
}

#[test]
fn weighted_loss_examples() {
    let (l, g) = weighted_loss(&[0.3f64, -0.2], &[0.3, -0.2], &[1.0, 1.0], &[], 0.0).unwrap();
    assert_eq!((l, g), (0.0, vec![0.0, 0.0]));
    let (l, g) = weighted_loss(&[1.0f64], &[-1.0], &[0.5], &[], 0.0).unwrap();
    assert_eq!(l, 2.0);
    assert_eq!(g, vec![2.0]);
    let w = [0.5f64, -1.5, 2.0];
    let (l, g) = weighted_loss(&[0.1f64, 0.4], &[0.9, -0.4], &[0.0, 0.0], &[&w], 0.01).unwrap();
    assert_eq!(l, 0.01 * (0.25 + 2.25 + 4.0));
    assert_eq!(g, vec![0.0, 0.0]);
    assert!(matches!(weighted_loss(&[1.0f64], &[1.0, 2.0], &[1.0], &[], 0.0), Err(NnError::ShapeMismatch(_))));
}

/// Independent weighting turns the loss into the sum of per-class MSEs.
#[test]
fn independent_total_is_sum_of_class_mse() {
    let (labels, classes) = common::random_labels([1, 1, 16, 16], 3);
    let pred: Vec<f64> = (0..256).map(|i| ((i * 37 % 101) as f64 / 50.0) - 1.0).collect();
    let c = ClassCounts::from_classes(&classes);
    let alpha = weights_independent_class_mse(&c, &classes).unwrap();
    let (loss, _) = weighted_loss(&pred, &labels.data, &alpha, &[], 0.0).unwrap();
    let mut direct = 0.0;
    for k in CellClass::ALL {
        let idx: Vec<usize> = (0..256).filter(|&i| classes[i] == k).collect();
        if !idx.is_empty() {
            direct += idx.iter().map(|&i| (pred[i] - labels.data[i]).powi(2)).sum::<f64>() / idx.len() as f64;
        }
    }
    assert!((loss - direct).abs() < 1e-9, "{loss} vs {direct}");
}

#[test]
fn batch_loss_gradient_matches_differences() {
    let (labels, classes) = common::random_labels([2, 1, 4, 4], 5);
    let logits = common::random_labels([2, 1, 4, 4], 6).0.map(|v| 3.0 * v);
    let alpha = Tensor::from_vec([2, 1, 4, 4], (0..32).map(|i| 0.1 + (i % 5) as f64 * 0.2).collect()).unwrap();
    let bl = batch_loss(&logits, &labels, &alpha, &classes).unwrap();
    let h = 1e-6;
    for i in 0..32 {
        let (mut p, mut m) = (logits.clone(), logits.clone());
        p.data[i] += h;
        m.data[i] -= h;
        let num = (batch_loss(&p, &labels, &alpha, &classes).unwrap().loss
            - batch_loss(&m, &labels, &alpha, &classes).unwrap().loss)
            / (2.0 * h);
        assert!((num - bl.grad.data[i]).abs() < 1e-8, "{i}: {num} vs {}", bl.grad.data[i]);
    }
}

proptest! {
    /// Weights depend on class only, so permuting pixels within a class leaves the loss unchanged.
    #[test]
    fn loss_invariant_under_within_class_permutation(seed in 0u64..500, shift in 1usize..50) {
        let (labels, classes) = common::random_labels([1, 1, 8, 8], seed);
        let c = ClassCounts::from_classes(&classes);
        let pred: Vec<f64> = (0..64).map(|i| ((i as u64 * 31 + seed) % 17) as f64 / 8.5 - 1.0).collect();
        for scheme in [Scheme::InverseRatio, Scheme::Independent] {
            let alpha = gridwise_nn::loss::pixel_weights(scheme, &c, &classes).unwrap();
            let (l0, _) = weighted_loss(&pred, &labels.data, &alpha, &[], 0.0).unwrap();
            // rotate (pred, label) pairs among the pixels of each class
            let mut p2 = pred.clone();
            let mut y2 = labels.data.clone();
            for k in CellClass::ALL {
                let idx: Vec<usize> = (0..64).filter(|&i| classes[i] == k).collect();
                for (j, &i) in idx.iter().enumerate() {
                    let src = idx[(j + shift) % idx.len()];
                    p2[i] = pred[src];
                    y2[i] = labels.data[src];
                }
            }
            let (l1, _) = weighted_loss(&p2, &y2, &alpha, &[], 0.0).unwrap();
            prop_assert!((l0 - l1).abs() < 1e-9);
        }
    }
}
