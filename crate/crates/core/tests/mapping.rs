use gridwise_core::dataset::{make_pairs, PairConfig, DEFAULT_TAU};
use gridwise_core::gt::{accumulate_map, cut_labels, IdealIsmParams, MapSpec};
use gridwise_core::sensor::{simulate_frames, SensorConfig, SensorKind};
use gridwise_core::world::{generate_trajectory, generate_world, SceneMix};
use gridwise_core::CellClass;

#[test]
fn fixed_seeds_reproduce_the_whole_chain() {
    let build = || {
        let world = generate_world(9, &SceneMix::default()).unwrap();
        let traj = generate_trajectory(&world, 9, 1.5).unwrap().truncated(6);
        let radar = simulate_frames(&world, &traj, &SensorConfig::default_for(SensorKind::Radar), 3);
        let lidar = simulate_frames(&world, &traj, &SensorConfig::default_for(SensorKind::Lidar), 3);
        let map = accumulate_map(&lidar, &traj, &IdealIsmParams::default(), &MapSpec::covering(&world.bounds, 0.25)).unwrap();
        (world, traj, radar, lidar, map)
    };
    assert_eq!(build(), build());
    let other = simulate_frames(
        &build().0,
        &build().1,
        &SensorConfig::default_for(SensorKind::Radar),
        4,
    );
    assert_ne!(other, build().2);
}

#[test]
fn the_vehicle_drives_through_free_space() {
    let world = generate_world(2, &SceneMix::default()).unwrap();
    let traj = generate_trajectory(&world, 2, 1.5).unwrap().truncated(30);
    let scans = simulate_frames(&world, &traj, &SensorConfig::default_for(SensorKind::Lidar), 2);
    let map = accumulate_map(&scans, &traj, &IdealIsmParams::default(), &MapSpec::covering(&world.bounds, 0.25)).unwrap();
    for p in &traj.poses {
        let (ix, iy) = map.cell_of([p.pose().x, p.pose().y]).expect("pose inside the map");
        assert_eq!(CellClass::from_logit(map.get(ix, iy), DEFAULT_TAU), CellClass::Free);
    }
}

#[test]
fn labels_from_the_same_map_agree_across_sensors() {
    let side = 64;
    let window = 15.0;
    let world = generate_world(6, &SceneMix::default()).unwrap();
    let traj = generate_trajectory(&world, 6, 1.5).unwrap().truncated(8);
    let lidar = simulate_frames(&world, &traj, &SensorConfig::default_for(SensorKind::Lidar), 6);
    let radar = simulate_frames(&world, &traj, &SensorConfig::default_for(SensorKind::Radar), 6);
    let spec = MapSpec::covering(&world.bounds, window / side as f64);
    let map = accumulate_map(&lidar, &traj, &IdealIsmParams::default(), &spec).unwrap();
    let cut = cut_labels(&map, &traj, side).unwrap();
    let cfg = PairConfig {
        side,
        window,
        v_thresh: 0.4,
        tau: DEFAULT_TAU,
        world_seed: 6,
    };
    let lp = make_pairs(&lidar, &cut.patches, &traj, &cfg).unwrap();
    let rp = make_pairs(&radar, &cut.patches, &traj, &cfg).unwrap();
    assert_eq!(lp.len(), rp.len());
    for (a, b) in lp.iter().zip(&rp) {
        assert_eq!(a.label, b.label);
        assert_eq!(a.counts, b.counts);
        assert!(a.input.iter().chain(&b.input).all(|&v| v == -1.0 || v == 1.0));
    }
    // radar returns are far sparser than a LiDAR sweep
    let lit = |ps: &[gridwise_core::dataset::PatchPair]| ps.iter().flat_map(|p| &p.input).filter(|&&v| v > 0.0).count();
    assert!(lit(&rp) < lit(&lp));
}
