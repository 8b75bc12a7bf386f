use proptest::prelude::*;
use rand::Rng;

use super::*;
use crate::gt::{accumulate_map, cut_labels, IdealIsmParams, MapSpec};
use crate::rng;
use crate::sensor::{simulate_frames, Detection, LidarParams, SensorConfig};
use crate::world::{generate_trajectory, generate_world, SceneMix, TimedPose};

fn blank_trajectory(n: usize) -> Trajectory {
    Trajectory {
        poses: (0..n)
            .map(|k| TimedPose {
                t: k as f64 * 0.1,
                x: k as f64,
                y: 0.0,
                heading: 0.0,
            })
            .collect(),
        odometry_noise: Default::default(),
    }
}

fn scan_at(t: f64, detections: Vec<Detection>) -> Scan {
    Scan {
        sensor_kind: SensorKind::Lidar,
        timestamp: t,
        pose: Pose2D::default(),
        detections,
    }
}

fn cfg(side: usize) -> PairConfig {
    PairConfig {
        side,
        window: side as f64 * 0.25,
        v_thresh: 0.4,
        tau: DEFAULT_TAU,
        world_seed: 7,
    }
}

fn patch_with(side: usize, f: impl Fn(usize) -> f64) -> OccupancyGrid {
    let mut g = OccupancyGrid::vehicle_centered(side, 0.25).unwrap();
    for (i, c) in g.cells_mut().iter_mut().enumerate() {
        *c = f(i);
    }
    g
}

fn pair_with_label(side: usize, label: Vec<f32>, seed: u64, frame: usize) -> PatchPair {
    let input = (0..side * side).map(|i| if i % 7 == 0 { 1.0 } else { -1.0 }).collect();
    PatchPair {
        side,
        input,
        counts: ClassCounts::from_classes(&label_classes(&label, DEFAULT_TAU)),
        label,
        pose: Pose2D::new(frame as f64, seed as f64, 0.1),
        world_seed: seed,
        frame,
    }
}

#[test]
fn empty_inputs_give_no_pairs() {
    let pairs = make_pairs(&[], &[], &blank_trajectory(0), &cfg(8)).unwrap();
    assert!(pairs.is_empty());
}

#[test]
fn misaligned_inputs_are_rejected() {
    let scans = vec![scan_at(0.0, vec![])];
    let err = make_pairs(&scans, &[], &blank_trajectory(2), &cfg(8)).unwrap_err();
    assert!(matches!(err, Error::LengthMismatch { .. }));
}

#[test]
fn all_unknown_label_counts() {
    let traj = blank_trajectory(1);
    let scans = vec![scan_at(0.0, vec![Detection::at([0.3, 0.2])])];
    let patches = vec![(0, patch_with(8, |_| 0.0))];
    let pairs = make_pairs(&scans, &patches, &traj, &cfg(8)).unwrap();
    assert_eq!(pairs.len(), 1);
    let p = &pairs[0];
    assert_eq!(
        p.counts,
        ClassCounts {
            free: 0,
            unknown: 64,
            occupied: 0,
            total: 64
        }
    );
    assert!(p.input.iter().all(|&v| v == 1.0 || v == -1.0));
    assert_eq!(p.input.iter().filter(|&&v| v == 1.0).count(), 1);
    assert!(p.label.iter().all(|&v| v == 0.0));
}

#[test]
fn two_percent_occupied_label() {
    let side = 50;
    let patch = patch_with(side, |i| if i < 50 { 3.0 } else if i % 2 == 0 { -2.0 } else { 0.5 });
    let traj = blank_trajectory(1);
    let pairs = make_pairs(&[scan_at(0.0, vec![])], &[(0, patch)], &traj, &cfg(side)).unwrap();
    let c = pairs[0].counts;
    assert!(c.is_consistent());
    assert_eq!(c.total, 2500);
    assert!((c.occupied as f64 / c.total as f64 - 0.02).abs() < 1e-12);
}

#[test]
fn label_mapping_and_thresholds() {
    let patch = patch_with(4, |i| [-50.0, -DEFAULT_TAU, DEFAULT_TAU, 50.0][i % 4]);
    let y = label_from_patch(&patch);
    assert!(y.iter().all(|v| (-1.0..=1.0).contains(v)));
    assert_eq!(label_class(1.0, DEFAULT_TAU), CellClass::Occupied);
    assert_eq!(label_class(-1.0, DEFAULT_TAU), CellClass::Free);
    // p = 0.75 sits exactly on the threshold and stays unknown.
    assert_eq!(label_class(0.5, DEFAULT_TAU), CellClass::Unknown);
    assert_eq!(label_class(-0.5, DEFAULT_TAU), CellClass::Unknown);
    assert_eq!(label_class(0.5001, DEFAULT_TAU), CellClass::Occupied);
}

#[test]
fn label_classes_agree_with_trinarize() {
    let patch = patch_with(8, |i| (i as f64 - 32.0) * 0.11);
    let y = label_from_patch(&patch);
    let mut from_grid: Vec<CellClass> = Vec::new();
    let rows = patch.to_image_rows();
    for l in rows {
        from_grid.push(CellClass::from_logit(l, DEFAULT_TAU));
    }
    assert_eq!(label_classes(&y, DEFAULT_TAU), from_grid);
}

#[test]
fn radar_pairs_drop_moving_detections() {
    let traj = blank_trajectory(1);
    let mut moving = Detection::at([1.0, 0.0]);
    moving.radial_velocity = 3.0;
    let still = Detection::at([-1.0, 0.0]);
    let scan = Scan {
        sensor_kind: SensorKind::Radar,
        ..scan_at(0.0, vec![moving, still])
    };
    let pairs = make_pairs(&[scan], &[(0, patch_with(16, |_| 0.0))], &traj, &cfg(16)).unwrap();
    assert_eq!(pairs[0].input.iter().filter(|&&v| v > 0.0).count(), 1);
}

#[test]
fn identity_augmentation_is_identity() {
    let side = 6;
    let label: Vec<f32> = (0..36).map(|i| (i as f32 / 18.0) - 1.0).collect();
    let p = pair_with_label(side, label, 1, 0);
    assert_eq!(augment_with(&p, D4::IDENTITY), p);
}

#[test]
fn d4_orbit_has_at_most_eight_images() {
    let side = 5;
    let img: Vec<u32> = (0..25).collect();
    let orbit: std::collections::HashSet<Vec<u32>> = D4::all().map(|g| g.apply(&img, side)).collect();
    assert_eq!(orbit.len(), 8);
    // A symmetric image has a smaller orbit.
    let sym: Vec<u32> = (0..25).map(|i| ((i / 5) as i32 - 2).unsigned_abs() + ((i % 5) as i32 - 2).unsigned_abs()).collect();
    let orbit: std::collections::HashSet<Vec<u32>> = D4::all().map(|g| g.apply(&sym, side)).collect();
    assert_eq!(orbit.len(), 1);
}

#[test]
fn quarter_turn_small_example() {
    // 0 1
    // 2 3   rotated counter-clockwise becomes   1 3 / 0 2
    let g = D4 {
        rot: 1,
        ..D4::IDENTITY
    };
    assert_eq!(g.apply(&[0, 1, 2, 3], 2), vec![1, 3, 0, 2]);
    let four = D4 {
        rot: 4,
        ..D4::IDENTITY
    };
    assert_eq!(four.apply(&[0, 1, 2, 3], 2), vec![0, 1, 2, 3]);
}

#[test]
fn augmentation_commutes_with_rasterization() {
    let side = 16;
    let window = 4.0;
    let res = window / side as f64;
    let mut r = rng::stream(3, &[0]);
    let points: Vec<[f64; 2]> = (0..20)
        .map(|_| {
            let c = r.random_range(0..side) as f64;
            let row = r.random_range(0..side) as f64;
            [(c + 0.5) * res - window / 2.0, window / 2.0 - (row + 0.5) * res]
        })
        .collect();
    let raster = |pts: &[[f64; 2]]| {
        rasterize(
            &scan_at(0.0, pts.iter().map(|&p| Detection::at(p)).collect()),
            side,
            window,
        )
        .pixels
    };
    let base = raster(&points);
    for g in D4::all() {
        let moved: Vec<[f64; 2]> = points.iter().map(|&p| g.apply_point(p)).collect();
        assert_eq!(raster(&moved), g.apply(&base, side), "{g:?}");
    }
}

#[test]
fn split_counts_and_fraction_errors() {
    let pairs: Vec<PatchPair> = (0..10u64)
        .flat_map(|s| (0..2).map(move |f| pair_with_label(4, vec![0.0; 16], s * 3 + 1, f)))
        .collect();
    let meta = DatasetMeta {
        sensor: SensorKind::Lidar,
        side: 4,
        resolution: 0.25,
        tau: DEFAULT_TAU,
    };
    let dir = tempfile::tempdir().unwrap();
    let m = split_save(&pairs, 0.8, &meta, dir.path()).unwrap();
    assert_eq!(m.train.seeds.len(), 8);
    assert_eq!(m.test.seeds.len(), 2);
    assert!(m.train.seeds.iter().all(|s| !m.test.seeds.contains(s)));
    assert_eq!(m.train.samples.len() + m.test.samples.len(), 20);
    for frac in [1.0, 0.0, 0.01] {
        assert!(matches!(
            split_save(&pairs, frac, &meta, dir.path().join("x")),
            Err(Error::DegenerateSplit(_))
        ));
    }
    assert!(matches!(split_save(&[], 0.5, &meta, dir.path()), Err(Error::DegenerateSplit(_))));
}

#[test]
fn real_pipeline_round_trip_and_no_leakage() {
    let side = 32;
    let window = 7.5;
    let mut pairs = Vec::new();
    for seed in [11u64, 12, 13] {
        let world = generate_world(seed, &SceneMix::default()).unwrap();
        let traj = generate_trajectory(&world, seed, 2.0).unwrap().truncated(6);
        let sensor = SensorConfig::Lidar(LidarParams::default());
        let scans = simulate_frames(&world, &traj, &sensor, seed);
        let spec = MapSpec::covering(&world.bounds, window / side as f64);
        let map = accumulate_map(&scans, &traj, &IdealIsmParams::default(), &spec).unwrap();
        let cut = cut_labels(&map, &traj, side).unwrap();
        let c = PairConfig {
            side,
            window,
            v_thresh: 0.4,
            tau: DEFAULT_TAU,
            world_seed: seed,
        };
        pairs.extend(make_pairs(&scans, &cut.patches, &traj, &c).unwrap());
    }
    assert!(pairs.iter().all(|p| p.counts.is_consistent() && p.counts.total == side * side));
    let meta = DatasetMeta {
        sensor: SensorKind::Lidar,
        side,
        resolution: window / side as f64,
        tau: DEFAULT_TAU,
    };
    let dir = tempfile::tempdir().unwrap();
    let m = split_save(&pairs, 0.67, &meta, dir.path()).unwrap();
    assert_eq!(m.train.seeds, vec![11, 12]);
    let ds = load_dataset(dir.path()).unwrap();
    assert_eq!(ds.manifest, m);
    let mut reloaded: Vec<PatchPair> = ds.train.iter().chain(&ds.test).cloned().collect();
    reloaded.sort_by_key(|p| (p.world_seed, p.frame));
    assert_eq!(reloaded.len(), pairs.len());
    for (a, b) in reloaded.iter().zip(&pairs) {
        assert_eq!(a.world_seed, b.world_seed);
        assert_eq!(a.frame, b.frame);
        assert!(a.input.iter().zip(&b.input).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert!(a.label.iter().zip(&b.label).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert_eq!(a, b);
    }
    assert!(ds.train.iter().all(|p| !m.test.seeds.contains(&p.world_seed)));
    assert!(ds.test.iter().all(|p| m.test.seeds.contains(&p.world_seed)));
}

#[test]
fn tampered_blob_is_rejected() {
    let pairs: Vec<PatchPair> = (0..2u64).map(|s| pair_with_label(4, vec![0.0; 16], s, 0)).collect();
    let meta = DatasetMeta {
        sensor: SensorKind::Radar,
        side: 4,
        resolution: 0.25,
        tau: DEFAULT_TAU,
    };
    let dir = tempfile::tempdir().unwrap();
    split_save(&pairs, 0.5, &meta, dir.path()).unwrap();
    let blob = dir.path().join("test").join("samples.f32");
    let mut bytes = std::fs::read(&blob).unwrap();
    // Turn one unknown label pixel into a confidently occupied one.
    let off = (16 + 3) * 4;
    bytes[off..off + 4].copy_from_slice(&0.9f32.to_le_bytes());
    std::fs::write(&blob, &bytes).unwrap();
    assert!(matches!(load_dataset(dir.path()), Err(Error::Format { .. })));
    std::fs::write(&blob, &bytes[..10]).unwrap();
    assert!(matches!(load_dataset(dir.path()), Err(Error::Format { .. })));
}

proptest! {
    #[test]
    fn augmentation_preserves_counts(seed in any::<u64>(), vals in prop::collection::vec(-1.0f32..=1.0, 36)) {
        let p = pair_with_label(6, vals, 4, 2);
        let mut r = rng::stream(seed, &[]);
        let q = augment(&p, &mut r);
        prop_assert_eq!(q.counts, ClassCounts::from_classes(&q.classes(DEFAULT_TAU)));
        prop_assert_eq!(q.counts, p.counts);
        let mut a = p.input.clone();
        let mut b = q.input.clone();
        a.sort_by(f32::total_cmp);
        b.sort_by(f32::total_cmp);
        prop_assert_eq!(a, b);
    }
}
