use std::path::Path;
use std::process::{Command, Output};

use gridwise_core::grid::write_grid;
use gridwise_core::OccupancyGrid;

fn gridwise(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gridwise"))
        .args(args)
        .env("GRIDWISE_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = gridwise(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn help_lists_every_subcommand() {
    let out = gridwise(&["--help"]);
    let text = String::from_utf8_lossy(&out.stdout);
    for cmd in [
        "gen-world",
        "simulate",
        "build-gt",
        "make-dataset",
        "train",
        "predict",
        "stitch",
        "eval",
        "export",
    ] {
        assert!(text.contains(cmd), "{cmd} missing from help");
        let sub = gridwise(&[cmd, "--help"]);
        let help = String::from_utf8_lossy(&sub.stdout);
        for line in help.lines().filter(|l| l.trim_start().starts_with("--")) {
            let described = line.trim_start().splitn(2, "  ").nth(1).is_some_and(|d| !d.trim().is_empty());
            assert!(described, "{cmd}: undocumented flag `{}`", line.trim());
        }
    }
}

#[test]
fn bad_arguments_exit_2() {
    assert_eq!(gridwise(&["gen-world", "--out", "x"]).status.code(), Some(2));
    assert_eq!(gridwise(&["frobnicate"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let d = s(dir.path());
    let out = gridwise(&["make-dataset", "--scans", d, "--gt", d, "--side", "32", "--out", d]);
    assert_eq!(out.status.code(), Some(2));
    let out = gridwise(&["export", "--grid", d, "--format", "jpeg", "--out", d]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn training_on_missing_or_empty_dataset_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("m.aenn");
    let out = gridwise(&["train", "--dataset", s(dir.path()), "--scheme", "independent", "--out", s(&model)]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!model.exists());
}

#[test]
fn unknown_map_exports_mid_gray() {
    let dir = tempfile::tempdir().unwrap();
    let map = dir.path().join("blank.grid");
    write_grid(&OccupancyGrid::new(7, 5, 0.5, [0.0, 0.0]).unwrap(), &map).unwrap();
    let pgm = dir.path().join("blank.pgm");
    ok(&["export", "--grid", s(&map), "--format", "pgm", "--out", s(&pgm)]);
    let bytes = std::fs::read(&pgm).unwrap();
    let header = b"P5\n7 5\n255\n";
    assert_eq!(&bytes[..header.len()], header);
    assert!(bytes[header.len()..].iter().all(|&b| b == 128));
    assert_eq!(bytes.len(), header.len() + 35);
    let png = dir.path().join("blank.png");
    ok(&["export", "--grid", s(&map), "--format", "png", "--out", s(&png)]);
    assert!(std::fs::read(&png).unwrap().starts_with(b"\x89PNG"));
}

#[test]
fn small_pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name);
    let config = p("train.json");
    std::fs::write(
        &config,
        r#"{"model": {"base_channels": 2, "depth": 4}, "train": {"epochs": 1, "batch_size": 4, "seed": 3}}"#,
    )
    .unwrap();
    let mut scans = Vec::new();
    let mut gts = Vec::new();
    for seed in ["1", "2"] {
        let world = p(&format!("world{seed}"));
        let drive = p(&format!("lidar{seed}"));
        let gt = p(&format!("gt{seed}.grid"));
        ok(&["gen-world", "--seed", seed, "--out", s(&world)]);
        ok(&[
            "simulate", "--world", s(&world), "--sensor", "lidar", "--traj-seed", seed, "--seed", seed, "--frames", "6",
            "--out", s(&drive),
        ]);
        ok(&["build-gt", "--scans", s(&drive), "--out", s(&gt)]);
        scans.push(drive);
        gts.push(gt);
    }
    let ds = p("dataset");
    ok(&[
        "make-dataset", "--scans", s(&scans[0]), "--scans", s(&scans[1]), "--gt", s(&gts[0]), "--gt", s(&gts[1]),
        "--side", "64", "--split", "0.5", "--out", s(&ds),
    ]);
    assert!(ds.join("manifest.json").exists());
    assert!(ds.join("train").join("samples.f32").exists());
    let model = p("model.aenn");
    ok(&["train", "--dataset", s(&ds), "--scheme", "inverse-ratio", "--config", s(&config), "--out", s(&model)]);
    let log = std::fs::read_to_string(p("model.aenn.log.csv")).unwrap();
    assert_eq!(log.lines().count(), 2);

    let patch = p("patch.grid");
    let scan = scans[1].join("scans").join("frame_00003.csv");
    ok(&["predict", "--model", s(&model), "--scan", s(&scan), "--out", s(&patch)]);
    let grid = gridwise_core::grid::read_grid(&patch).unwrap();
    assert_eq!((grid.width(), grid.height()), (64, 64));

    let map = p("map.grid");
    ok(&["stitch", "--model", s(&model), "--scans", s(&scans[1]), "--out", s(&map)]);
    ok(&["export", "--grid", s(&map), "--format", "png", "--out", s(&p("map.png"))]);

    let metrics = p("metrics.json");
    ok(&[
        "eval", "--model", s(&model), "--dataset", s(&ds), "--scans", s(&scans[1]), "--gt", s(&gts[1]), "--out",
        s(&metrics),
    ]);
    let m: serde_json::Value = serde_json::from_slice(&std::fs::read(&metrics).unwrap()).unwrap();
    for key in ["scheme", "sensor", "free_mse", "unknown_mse", "occupied_mse", "occ_iou", "free_iou"] {
        assert!(m.get(key).is_some(), "{key}");
    }
    assert_eq!(m["scheme"], "inverse-ratio");
    assert_eq!(m["sensor"], "lidar");

    // a radar drive cannot be fed to the LiDAR model
    ok(&[
        "simulate", "--world", s(&p("world1")), "--sensor", "radar", "--traj-seed", "1", "--frames", "2", "--out",
        s(&p("radar1")),
    ]);
    let out = gridwise(&["stitch", "--model", s(&model), "--scans", s(&p("radar1")), "--out", s(&p("r.grid"))]);
    assert_eq!(out.status.code(), Some(3));
    // ground truth only comes from LiDAR
    let out = gridwise(&["build-gt", "--scans", s(&p("radar1")), "--out", s(&p("r.grid"))]);
    assert_eq!(out.status.code(), Some(3));
}
