use gridwise::mapper::*;
use gridwise::GwError;
use gridwise_core::dataset::{label_classes, ClassCounts, PatchPair, DEFAULT_TAU};
use gridwise_core::gt::{accumulate_map, single_shot_grid, single_shot_side, IdealIsmParams, MapSpec};
use gridwise_core::sensor::{simulate_frames, Detection, LidarParams, Scan, SensorConfig, SensorKind};
use gridwise_core::world::{generate_trajectory, generate_world, SceneMix, TimedPose, Trajectory};
use gridwise_core::{OccupancyGrid, Pose2D};
use gridwise_nn::{AeModel, ModelCard, ModelConfig, Scheme};

fn small_model(sensor: SensorKind) -> InverseSensorModel {
    let config = ModelConfig {
        base_channels: 4,
        depth: 2,
    };
    InverseSensorModel {
        model: AeModel::new(config, 11).unwrap(),
        card: ModelCard {
            config,
            side: 16,
            resolution: 0.25,
            sensor: Some(sensor),
            scheme: Some(Scheme::Independent),
            tau: DEFAULT_TAU,
            v_thresh: 0.4,
        },
    }
}

fn scan(kind: SensorKind, t: f64, pts: &[[f64; 2]]) -> Scan {
    Scan {
        sensor_kind: kind,
        timestamp: t,
        pose: Pose2D::default(),
        detections: pts.iter().map(|&p| Detection::at(p)).collect(),
    }
}

fn spec() -> MapSpec {
    MapSpec {
        origin: [-10.0, -10.0],
        width: 80,
        height: 80,
        resolution: 0.25,
    }
}

fn straight(n: usize) -> Trajectory {
    Trajectory {
        poses: (0..n)
            .map(|k| TimedPose {
                t: k as f64,
                x: k as f64 * 0.5 - 2.0,
                y: 0.3 * k as f64,
                heading: 0.2 * k as f64,
            })
            .collect(),
        odometry_noise: Default::default(),
    }
}

#[test]
fn predicted_patch_contract() {
    let ism = small_model(SensorKind::Lidar);
    let empty = ism.predict_patch(&scan(SensorKind::Lidar, 0.0, &[])).unwrap();
    assert_eq!((empty.width(), empty.height()), (16, 16));
    assert_eq!(empty.resolution(), 0.25);
    assert_eq!(empty.origin(), [-2.0, -2.0]);
    assert!(empty.cells().iter().all(|v| v.is_finite()));
    let s = scan(SensorKind::Lidar, 0.0, &[[1.0, 0.5], [-1.2, 1.7]]);
    let a = predict_patch(&ism, &s).unwrap();
    let b = predict_patch(&ism, &s).unwrap();
    assert!(a.cells().iter().zip(b.cells()).all(|(x, y)| x.to_bits() == y.to_bits()));
    assert_ne!(a, empty);
}

#[test]
fn wrong_sensor_is_rejected() {
    let ism = small_model(SensorKind::Radar);
    let err = ism.predict_patch(&scan(SensorKind::Lidar, 0.0, &[])).unwrap_err();
    assert!(matches!(err, GwError::SensorKindMismatch { .. }));
    assert_eq!(err.exit_code(), 3);
}

#[test]
fn patch_pixels_follow_the_raster_layout() {
    // Logits come back in image order; row 0 is the +y edge of the patch.
    let ism = small_model(SensorKind::Lidar);
    let input = vec![-1.0f32; 256];
    let logits = ism.logits(&[input]).unwrap().remove(0);
    let patch = ism.predict_patch(&scan(SensorKind::Lidar, 0.0, &[])).unwrap();
    for row in 0..16 {
        for col in 0..16 {
            assert_eq!(patch.get(col, 15 - row), logits[row * 16 + col] as f64);
        }
    }
}

#[test]
fn stitching_zero_one_and_reversed() {
    let ism = small_model(SensorKind::Lidar);
    let empty = stitch(&ism, &[], &straight(0), &spec()).unwrap();
    assert!(empty.cells().iter().all(|&v| v == 0.0));

    // a single frame at a cell-aligned pose lands cell for cell
    let one = Trajectory {
        poses: vec![TimedPose {
            t: 0.0,
            x: 1.0,
            y: -2.0,
            heading: 0.0,
        }],
        odometry_noise: Default::default(),
    };
    let s = vec![scan(SensorKind::Lidar, 0.0, &[[1.0, 0.5]])];
    let map = stitch(&ism, &s, &one, &spec()).unwrap();
    let patch = ism.predict_patch(&s[0]).unwrap();
    for iy in 0..16 {
        for ix in 0..16 {
            // patch origin (-2, -2) + pose (1, -2) = world (-1, -4) = map cell (36, 24)
            assert_eq!(map.get(36 + ix, 24 + iy), patch.get(ix, iy));
        }
    }

    let traj = straight(6);
    let scans: Vec<Scan> = (0..6).map(|k| scan(SensorKind::Lidar, k as f64, &[[1.0, k as f64 * 0.2]])).collect();
    let fwd = stitch(&ism, &scans, &traj, &spec()).unwrap();
    let rev_traj = Trajectory {
        poses: traj.poses.iter().rev().cloned().collect(),
        odometry_noise: Default::default(),
    };
    let rev_scans: Vec<Scan> = scans.iter().rev().cloned().collect();
    let rev = stitch(&ism, &rev_scans, &rev_traj, &spec()).unwrap();
    assert!(fwd.cells().iter().zip(rev.cells()).all(|(a, b)| (a - b).abs() <= 1e-6));
    assert!(fwd.cells().iter().all(|v| v.is_finite()));
    assert!(stitch(&ism, &scans[..2], &traj, &spec()).is_err());
}

#[test]
fn ideal_patches_reproduce_ground_truth() {
    let world = generate_world(21, &SceneMix::default()).unwrap();
    let traj = generate_trajectory(&world, 21, 2.0).unwrap().truncated(15);
    let scans = simulate_frames(&world, &traj, &SensorConfig::Lidar(LidarParams::default()), 21);
    let spec = MapSpec::covering(&world.bounds, 0.25);
    let params = IdealIsmParams::default();
    let gt = accumulate_map(&scans, &traj, &params, &spec).unwrap();
    let side = single_shot_side(&params, 0.25);
    let patches: Vec<OccupancyGrid> = scans.iter().map(|s| single_shot_grid(s, &params, side, 0.25).unwrap()).collect();
    let poses: Vec<Pose2D> = traj.poses.iter().map(|p| p.pose()).collect();
    let map = stitch_patches(&patches, &poses, &spec).unwrap();
    let worst = map.cells().iter().zip(gt.cells()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(worst <= 1e-6, "{worst}");
}

#[test]
fn per_class_mse_examples() {
    let labels = vec![vec![-1.0f32, 1.0, -1.0, 0.0], vec![1.0, 1.0, -1.0, -1.0]];
    let m = per_class_mse(&labels, &labels, DEFAULT_TAU).unwrap();
    assert_eq!((m.free, m.unknown, m.occupied), (Some(0.0), Some(0.0), Some(0.0)));
    let zeros = vec![vec![0.0f32; 4]; 2];
    let m = per_class_mse(&zeros, &labels, DEFAULT_TAU).unwrap();
    assert_eq!((m.free, m.occupied), (Some(1.0), Some(1.0)));
    let only_free = vec![vec![-1.0f32; 4]];
    let m = per_class_mse(&only_free, &only_free, DEFAULT_TAU).unwrap();
    assert_eq!((m.unknown, m.occupied), (None, None));
    assert!(per_class_mse(&zeros, &labels[..1], DEFAULT_TAU).is_err());
}

#[test]
fn constant_unknown_baseline_is_mean_label_square() {
    let label: Vec<f32> = (0..64).map(|i| ((i * 13 % 29) as f32 / 14.0) - 1.0).collect();
    let classes = label_classes(&label, DEFAULT_TAU);
    let pair = PatchPair {
        side: 8,
        input: vec![-1.0; 64],
        counts: ClassCounts::from_classes(&classes),
        label: label.clone(),
        pose: Pose2D::default(),
        world_seed: 0,
        frame: 0,
    };
    let b = constant_unknown_baseline(&[pair], DEFAULT_TAU).unwrap();
    for (k, got) in [b.free, b.unknown, b.occupied].into_iter().enumerate() {
        let vals: Vec<f64> = label
            .iter()
            .zip(&classes)
            .filter(|(_, c)| c.index() == k)
            .map(|(&y, _)| (y as f64).powi(2))
            .collect();
        let want = vals.iter().sum::<f64>() / vals.len() as f64;
        assert!((got.unwrap() - want).abs() < 1e-12);
    }
}

fn grid_from(values: impl Fn(usize, usize) -> f64) -> OccupancyGrid {
    let mut g = OccupancyGrid::new(6, 6, 1.0, [0.0, 0.0]).unwrap();
    for iy in 0..6 {
        for ix in 0..6 {
            g.set(ix, iy, values(ix, iy));
        }
    }
    g
}

#[test]
fn map_agreement_examples() {
    let gt = grid_from(|x, y| [3.0, -3.0, 0.0][(x + 2 * y) % 3]);
    let a = map_agreement(&gt, &gt, DEFAULT_TAU).unwrap();
    assert_eq!((a.occ_iou, a.free_iou), (1.0, 1.0));
    let unknown = grid_from(|_, _| 0.0);
    let a = map_agreement(&unknown, &gt, DEFAULT_TAU).unwrap();
    assert_eq!((a.occ_iou, a.free_iou), (0.0, 0.0));
    assert_eq!(a.confusion[2][1] + a.confusion[0][1] + a.confusion[1][1], 36);
    let checker = grid_from(|x, y| if (x + y) % 2 == 0 { 3.0 } else { -3.0 });
    let inverted = grid_from(|x, y| if (x + y) % 2 == 0 { -3.0 } else { 3.0 });
    let a = map_agreement(&inverted, &checker, DEFAULT_TAU).unwrap();
    assert_eq!((a.occ_iou, a.free_iou), (0.0, 0.0));
    let other = OccupancyGrid::new(5, 6, 1.0, [0.0, 0.0]).unwrap();
    assert!(map_agreement(&other, &gt, DEFAULT_TAU).is_err());
}
