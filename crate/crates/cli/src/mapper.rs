//! Frame-by-frame inference, stitching into world maps, and evaluation.

use std::path::Path;

use gridwise_core::dataset::{input_image, label_class, PatchPair};
use gridwise_core::gt::MapSpec;
use gridwise_core::sensor::Scan;
use gridwise_core::world::Trajectory;
use gridwise_core::{CellClass, OccupancyGrid, Pose2D};
use gridwise_nn::loss::ClassErrors;
use gridwise_nn::{head_to_prob, load_model, AeModel, ModelCard, Tensor};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GwError, GwResult};

/// A trained network together with the input contract it was trained under.
#[derive(Debug, Clone)]
pub struct InverseSensorModel {
    pub model: AeModel<f32>,
    pub card: ModelCard,
}

impl InverseSensorModel {
    pub fn load(path: impl AsRef<Path>) -> GwResult<Self> {
        let (model, card) = load_model(path)?;
        Ok(InverseSensorModel { model, card })
    }

    fn check_scan(&self, scan: &Scan) -> GwResult<()> {
        match self.card.sensor {
            Some(k) if k != scan.sensor_kind => Err(GwError::SensorKindMismatch {
                trained: k.to_string(),
                actual: scan.sensor_kind.to_string(),
            }),
            _ => Ok(()),
        }
    }

    /// Raw network logits for a batch of `{-1,+1}` input images.
    pub fn logits(&self, inputs: &[Vec<f32>]) -> GwResult<Vec<Vec<f32>>> {
        let side = self.card.side;
        let px = side * side;
        let mut data = Vec::with_capacity(inputs.len() * px);
        for i in inputs {
            if i.len() != px {
                return Err(gridwise_nn::NnError::ShapeMismatch(format!("input of {} pixels, model side {side}", i.len())).into());
            }
            data.extend_from_slice(i);
        }
        let x = Tensor::from_vec([inputs.len(), 1, side, side], data)?;
        let y = self.model.infer(&x)?;
        Ok(y.data.chunks(px).map(|c| c.to_vec()).collect())
    }

    /// Vehicle-centered log-odds patch predicted from one scan.
    pub fn predict_patch(&self, scan: &Scan) -> GwResult<OccupancyGrid> {
        self.check_scan(scan)?;
        let c = &self.card;
        let input = input_image(scan, c.side, c.window(), c.v_thresh);
        let logits = self.logits(&[input])?.remove(0);
        let rows: Vec<f64> = logits.iter().map(|&l| l as f64).collect();
        let half = c.window() / 2.0;
        Ok(OccupancyGrid::from_image_rows(c.side, c.side, c.resolution, [-half, -half], &rows)?)
    }

    pub fn predict_patches(&self, scans: &[Scan]) -> GwResult<Vec<OccupancyGrid>> {
        scans.par_iter().map(|s| self.predict_patch(s)).collect()
    }
}

pub fn predict_patch(ism: &InverseSensorModel, scan: &Scan) -> GwResult<OccupancyGrid> {
    ism.predict_patch(scan)
}

/// Fuses patches placed at their poses into a blank map.
pub fn stitch_patches(patches: &[OccupancyGrid], poses: &[Pose2D], spec: &MapSpec) -> GwResult<OccupancyGrid> {
    if patches.len() != poses.len() {
        return Err(gridwise_core::Error::LengthMismatch {
            what: "patches vs poses",
            left: patches.len(),
            right: poses.len(),
        }
        .into());
    }
    let mut map = spec.blank()?;
    for (p, pose) in patches.iter().zip(poses) {
        map.fuse(p, pose)?;
    }
    Ok(map)
}

/// Predicts every frame and fuses the patches at the trajectory poses.
pub fn stitch(ism: &InverseSensorModel, scans: &[Scan], trajectory: &Trajectory, spec: &MapSpec) -> GwResult<OccupancyGrid> {
    if scans.len() != trajectory.len() {
        return Err(gridwise_core::Error::LengthMismatch {
            what: "scans vs trajectory",
            left: scans.len(),
            right: trajectory.len(),
        }
        .into());
    }
    let patches = ism.predict_patches(scans)?;
    let poses: Vec<Pose2D> = trajectory.poses.iter().map(|p| p.pose()).collect();
    stitch_patches(&patches, &poses, spec)
}

/// Mean squared error per label class, in the `[-1, 1]` label scale.
/// Classes absent from the labels are `None`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMse {
    pub free: Option<f64>,
    pub unknown: Option<f64>,
    pub occupied: Option<f64>,
}

/// `preds` are predictions already in the label scale (`tanh(l / 2)`).
pub fn per_class_mse(preds: &[Vec<f32>], labels: &[Vec<f32>], tau: f64) -> GwResult<ClassMse> {
    if preds.len() != labels.len() {
        return Err(gridwise_core::Error::LengthMismatch {
            what: "predictions vs labels",
            left: preds.len(),
            right: labels.len(),
        }
        .into());
    }
    let mut e = ClassErrors::default();
    for (p, y) in preds.iter().zip(labels) {
        if p.len() != y.len() {
            return Err(gridwise_core::Error::LengthMismatch {
                what: "prediction vs label pixels",
                left: p.len(),
                right: y.len(),
            }
            .into());
        }
        for (&pv, &yv) in p.iter().zip(y) {
            e.add(label_class(yv, tau), pv as f64, yv as f64);
        }
    }
    let [free, unknown, occupied] = e.mse();
    Ok(ClassMse { free, unknown, occupied })
}

/// Model predictions (label scale) for a set of pairs, evaluated in chunks.
pub fn predict_pairs(ism: &InverseSensorModel, pairs: &[PatchPair]) -> GwResult<Vec<Vec<f32>>> {
    let chunks: Vec<&[PatchPair]> = pairs.chunks(16).collect();
    let out: Vec<Vec<Vec<f32>>> = chunks
        .par_iter()
        .map(|c| {
            let inputs: Vec<Vec<f32>> = c.iter().map(|p| p.input.clone()).collect();
            Ok(ism
                .logits(&inputs)?
                .into_iter()
                .map(|l| l.into_iter().map(head_to_prob).collect())
                .collect())
        })
        .collect::<GwResult<_>>()?;
    Ok(out.into_iter().flatten().collect())
}

/// Mean squared error of a predictor that always answers "unknown" (0).
pub fn constant_unknown_baseline(pairs: &[PatchPair], tau: f64) -> GwResult<ClassMse> {
    let zeros: Vec<Vec<f32>> = pairs.iter().map(|p| vec![0.0; p.label.len()]).collect();
    let labels: Vec<Vec<f32>> = pairs.iter().map(|p| p.label.clone()).collect();
    per_class_mse(&zeros, &labels, tau)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Agreement {
    pub occ_iou: f64,
    pub free_iou: f64,
    /// `confusion[gt][pred]` over all cells, indexed by [`CellClass::index`].
    pub confusion: [[usize; 3]; 3],
}

/// IoU of the occupied and free classes over cells whose ground truth is
/// not unknown. A class absent from both maps scores 1.
pub fn map_agreement(pred: &OccupancyGrid, gt: &OccupancyGrid, tau: f64) -> GwResult<Agreement> {
    if !pred.same_geometry(gt) {
        return Err(gridwise_core::Error::GeometryMismatch("prediction and ground-truth maps differ in geometry".into()).into());
    }
    let p = pred.trinarize(tau);
    let g = gt.trinarize(tau);
    let mut confusion = [[0usize; 3]; 3];
    for (a, b) in g.iter().zip(&p) {
        confusion[a.index()][b.index()] += 1;
    }
    let iou = |c: CellClass| {
        let (mut inter, mut union) = (0usize, 0usize);
        for (a, b) in g.iter().zip(&p) {
            if *a == CellClass::Unknown {
                continue;
            }
            let (ga, pb) = (*a == c, *b == c);
            inter += (ga && pb) as usize;
            union += (ga || pb) as usize;
        }
        if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        }
    };
    Ok(Agreement {
        occ_iou: iou(CellClass::Occupied),
        free_iou: iou(CellClass::Free),
        confusion,
    })
}

/// Evaluation report written by `gridwise eval`. MSE values are in the
/// `[-1, 1]` label scale; absent classes serialize as `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub scheme: Option<String>,
    pub sensor: Option<String>,
    pub free_mse: Option<f64>,
    pub unknown_mse: Option<f64>,
    pub occupied_mse: Option<f64>,
    pub occ_iou: Option<f64>,
    pub free_iou: Option<f64>,
}
