//! Building blocks shared by the command line and the experiment harness:
//! simulated drives on disk, ground-truth maps, datasets, training, evaluation.

use std::fs;
use std::path::{Path, PathBuf};

use gridwise_core::dataset::{make_pairs, PairConfig, PatchPair};
use gridwise_core::gt::{accumulate_map, cut_labels, IdealIsmParams, MapSpec};
use gridwise_core::sensor::{read_scan, simulate_frames, write_scan, Scan, SensorConfig, SensorKind};
use gridwise_core::world::{generate_trajectory, Bounds, Trajectory, World};
use gridwise_core::OccupancyGrid;
use gridwise_nn::loss::LossConfig;
use gridwise_nn::{train, AeModel, ModelCard, ModelConfig, TrainConfig, TrainOutcome};
use serde::{Deserialize, Serialize};

use crate::error::{GwError, GwResult};
use crate::mapper::{map_agreement, per_class_mse, predict_pairs, stitch, InverseSensorModel, Metrics};

/// Patch side at desk scale.
pub const DESK_SIDE: usize = 64;
/// Patch window at desk scale in meters (resolution 0.234375 m).
pub const DESK_WINDOW: f64 = 15.0;
/// Default spacing of trajectory poses in meters.
pub const DEFAULT_STEP: f64 = 1.5;
/// Radial speed above which radar detections count as moving.
pub const DEFAULT_V_THRESH: f64 = 0.4;

/// How a simulated drive was produced.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub world_seed: u64,
    pub traj_seed: u64,
    pub sensor_seed: u64,
    pub step: f64,
    pub frames: usize,
    pub bounds: Bounds,
    pub sensor: SensorConfig,
}

/// One simulated drive: poses and the scan taken at each.
#[derive(Debug, Clone, PartialEq)]
pub struct Run {
    pub info: RunInfo,
    pub trajectory: Trajectory,
    pub scans: Vec<Scan>,
}

impl Run {
    pub fn sensor_kind(&self) -> SensorKind {
        self.info.sensor.kind()
    }
}

/// Drives `world` along the trajectory for `traj_seed`, keeping at most
/// `frames` poses.
pub fn simulate_run(
    world: &World,
    sensor: SensorConfig,
    traj_seed: u64,
    sensor_seed: u64,
    frames: Option<usize>,
    step: f64,
) -> GwResult<Run> {
    let mut trajectory = generate_trajectory(world, traj_seed, step)?;
    if let Some(n) = frames {
        trajectory = trajectory.truncated(n);
    }
    let scans = simulate_frames(world, &trajectory, &sensor, sensor_seed);
    Ok(Run {
        info: RunInfo {
            world_seed: world.seed,
            traj_seed,
            sensor_seed,
            step,
            frames: trajectory.len(),
            bounds: world.bounds,
            sensor,
        },
        trajectory,
        scans,
    })
}

const RUN_FILE: &str = "run.json";
const TRAJ_FILE: &str = "trajectory.csv";
const SCAN_DIR: &str = "scans";

pub fn scan_path(dir: &Path, frame: usize) -> PathBuf {
    dir.join(SCAN_DIR).join(format!("frame_{frame:05}.csv"))
}

pub fn write_run(run: &Run, dir: impl AsRef<Path>) -> GwResult<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir.join(SCAN_DIR))?;
    fs::write(dir.join(RUN_FILE), serde_json::to_vec_pretty(&run.info)?)?;
    run.trajectory.write_csv(dir.join(TRAJ_FILE))?;
    for (k, s) in run.scans.iter().enumerate() {
        write_scan(s, scan_path(dir, k))?;
    }
    Ok(())
}

pub fn read_run(dir: impl AsRef<Path>) -> GwResult<Run> {
    let dir = dir.as_ref();
    let info: RunInfo = serde_json::from_slice(&fs::read(dir.join(RUN_FILE))?)?;
    let trajectory = Trajectory::read_csv(dir.join(TRAJ_FILE))?;
    let scans = (0..trajectory.len())
        .map(|k| read_scan(scan_path(dir, k)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Run { info, trajectory, scans })
}

pub fn map_spec(bounds: &Bounds, resolution: f64) -> MapSpec {
    MapSpec::covering(bounds, resolution)
}

/// Ground-truth map accumulated from a LiDAR drive with the ideal ISM.
pub fn ground_truth(run: &Run, resolution: f64) -> GwResult<OccupancyGrid> {
    let spec = map_spec(&run.info.bounds, resolution);
    Ok(accumulate_map(&run.scans, &run.trajectory, &IdealIsmParams::default(), &spec)?)
}

/// Pairs the scans of `run` with label patches cut from `gt` along the same trajectory.
pub fn pairs_for(run: &Run, gt: &OccupancyGrid, side: usize, v_thresh: f64, tau: f64) -> GwResult<Vec<PatchPair>> {
    let cut = cut_labels(gt, &run.trajectory, side)?;
    let cfg = PairConfig {
        side,
        window: side as f64 * gt.resolution(),
        v_thresh,
        tau,
        world_seed: run.info.world_seed,
    };
    Ok(make_pairs(&run.scans, &cut.patches, &run.trajectory, &cfg)?)
}

/// Settings for `train`; every field can also be given as a flag.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSettings {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub lambda: f64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            model: ModelConfig::DESK,
            train: TrainConfig::default(),
            lambda: 1e-4,
        }
    }
}

/// What a model is trained on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DataContract {
    pub sensor: SensorKind,
    pub side: usize,
    pub resolution: f64,
    pub tau: f64,
    pub v_thresh: f64,
}

pub fn train_model(
    pairs: &[PatchPair],
    contract: &DataContract,
    scheme: gridwise_nn::Scheme,
    settings: &TrainSettings,
) -> GwResult<(InverseSensorModel, TrainOutcome)> {
    if pairs.is_empty() {
        return Err(gridwise_nn::NnError::EmptyDataset.into());
    }
    let model = AeModel::<f32>::new(settings.model, settings.train.seed)?;
    let loss = LossConfig {
        scheme,
        lambda: settings.lambda,
        tau: contract.tau,
    };
    let outcome = train(model, pairs, &loss, &settings.train)?;
    let card = ModelCard {
        config: settings.model,
        side: contract.side,
        resolution: contract.resolution,
        sensor: Some(contract.sensor),
        scheme: Some(scheme),
        tau: contract.tau,
        v_thresh: contract.v_thresh,
    };
    Ok((
        InverseSensorModel {
            model: outcome.model.clone(),
            card,
        },
        outcome,
    ))
}

/// Per-class MSE on `pairs`, plus map IoU when stitched drives are given.
pub fn evaluate(
    ism: &InverseSensorModel,
    pairs: &[PatchPair],
    drives: &[(Run, OccupancyGrid)],
) -> GwResult<Metrics> {
    let preds = predict_pairs(ism, pairs)?;
    let labels: Vec<Vec<f32>> = pairs.iter().map(|p| p.label.clone()).collect();
    let mse = per_class_mse(&preds, &labels, ism.card.tau)?;
    let (mut occ, mut free) = (None, None);
    if !drives.is_empty() {
        let (mut o, mut f) = (0.0, 0.0);
        for (run, gt) in drives {
            let spec = MapSpec {
                origin: gt.origin(),
                width: gt.width(),
                height: gt.height(),
                resolution: gt.resolution(),
            };
            let map = stitch(ism, &run.scans, &run.trajectory, &spec)?;
            let a = map_agreement(&map, gt, ism.card.tau)?;
            o += a.occ_iou;
            f += a.free_iou;
        }
        occ = Some(o / drives.len() as f64);
        free = Some(f / drives.len() as f64);
    }
    Ok(Metrics {
        scheme: ism.card.scheme.map(|s| s.to_string()),
        sensor: ism.card.sensor.map(|s| s.to_string()),
        free_mse: mse.free,
        unknown_mse: mse.unknown,
        occupied_mse: mse.occupied,
        occ_iou: occ,
        free_iou: free,
    })
}

pub fn check_side(side: usize) -> GwResult<()> {
    if side != 64 && side != 128 {
        return Err(GwError::BadArgs(format!("--side must be 64 or 128, got {side}")));
    }
    Ok(())
}
