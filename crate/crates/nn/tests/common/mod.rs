#![allow(dead_code)]

use gridwise_core::dataset::{label_classes, ClassCounts, PatchPair, DEFAULT_TAU};
use gridwise_core::{rng, CellClass, Pose2D};
use gridwise_nn::Tensor;
use rand::Rng;

/// A synthetic pair: a horizontal wall in the input, its occupied row plus
/// free space in front of it in the label.
pub fn wall_pair(side: usize, row: usize, seed: u64) -> PatchPair {
    let mut input = vec![-1.0f32; side * side];
    let mut label = vec![0.0f32; side * side];
    for c in 0..side {
        input[row * side + c] = 1.0;
        label[row * side + c] = 0.95;
        for r in row + 1..side {
            label[r * side + c] = -0.9;
        }
    }
    let counts = ClassCounts::from_classes(&label_classes(&label, DEFAULT_TAU));
    PatchPair {
        side,
        input,
        label,
        pose: Pose2D::default(),
        counts,
        world_seed: seed,
        frame: row,
    }
}

pub fn random_batch(shape: [usize; 4], seed: u64) -> Tensor<f64> {
    let mut r = rng::stream(seed, &[]);
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| if r.random::<bool>() { 1.0 } else { -1.0 }).collect()).unwrap()
}

pub fn random_labels(shape: [usize; 4], seed: u64) -> (Tensor<f64>, Vec<CellClass>) {
    let mut r = rng::stream(seed, &[]);
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n)
        .map(|_| match r.random_range(0..10) {
            0 => 0.9,
            1..=5 => -0.8,
            _ => r.random_range(-0.3..0.3),
        })
        .collect();
    let classes = label_classes(&data.iter().map(|&v| v as f32).collect::<Vec<_>>(), DEFAULT_TAU);
    (Tensor::from_vec(shape, data).unwrap(), classes)
}
