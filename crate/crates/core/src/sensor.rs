//! LiDAR and radar simulation, moving-object filtering and rasterization of
//! scans into vehicle-centered binary images.

use std::f64::consts::TAU;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::Rng as _;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{normalize_angle, Pose2D};
use crate::rng::{self, Rng};
use crate::world::{RayCaster, Trajectory, World};

/// Hard cap on radar detections per frame.
pub const RADAR_MAX_DETECTIONS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SensorKind {
    Lidar,
    Radar,
}

impl SensorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SensorKind::Lidar => "lidar",
            SensorKind::Radar => "radar",
        }
    }

    fn stream_tag(self) -> u64 {
        match self {
            SensorKind::Lidar => 0x11DA,
            SensorKind::Radar => 0x2ADA,
        }
    }
}

impl std::fmt::Display for SensorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for SensorKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "lidar" => Ok(SensorKind::Lidar),
            "radar" => Ok(SensorKind::Radar),
            other => Err(format!("unknown sensor kind {other:?}")),
        }
    }
}

/// One polar detection in the vehicle frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub range: f64,
    pub azimuth: f64,
    pub radial_velocity: f64,
    pub amplitude: f64,
}

impl Detection {
    pub fn position(&self) -> [f64; 2] {
        let (s, c) = self.azimuth.sin_cos();
        [self.range * c, self.range * s]
    }

    /// Builds a detection from a vehicle-frame point.
    pub fn at(p: [f64; 2]) -> Detection {
        Detection {
            range: p[0].hypot(p[1]),
            azimuth: normalize_angle(p[1].atan2(p[0])),
            radial_velocity: 0.0,
            amplitude: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scan {
    pub sensor_kind: SensorKind,
    pub timestamp: f64,
    pub pose: Pose2D,
    pub detections: Vec<Detection>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LidarParams {
    pub n_beams: usize,
    pub max_range: f64,
    pub range_sigma: f64,
}

impl Default for LidarParams {
    fn default() -> Self {
        Self {
            n_beams: 360,
            max_range: 20.0,
            range_sigma: 0.02,
        }
    }
}

impl LidarParams {
    pub fn noise_free() -> Self {
        Self {
            range_sigma: 0.0,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadarParams {
    /// Candidate rays per frame; each is jittered within its angular bin.
    pub n_rays: usize,
    pub max_range: f64,
    pub budget: usize,
    pub range_sigma: f64,
    pub azimuth_sigma: f64,
    pub velocity_sigma: f64,
    /// Detection probability of a hit is `base_p * reflectivity`.
    pub base_p: f64,
    /// Poisson mean of multipath ghosts per frame.
    pub ghost_rate: f64,
    /// Ghosts appear this far behind a true hit, uniformly.
    pub ghost_extension: (f64, f64),
}

impl Default for RadarParams {
    fn default() -> Self {
        Self {
            n_rays: 180,
            max_range: 40.0,
            budget: RADAR_MAX_DETECTIONS,
            range_sigma: 0.3,
            azimuth_sigma: 2f64.to_radians(),
            velocity_sigma: 0.1,
            base_p: 0.35,
            ghost_rate: 1.5,
            ghost_extension: (2.0, 8.0),
        }
    }
}

/// Sweeps `n_beams` evenly spaced rays and keeps the nearest return of each.
pub fn simulate_lidar(world: &World, pose: &Pose2D, time: f64, params: &LidarParams, rng: &mut Rng) -> Scan {
    assert!(params.n_beams >= 8, "a lidar needs at least 8 beams");
    let caster = RayCaster::new(world, [pose.x, pose.y], params.max_range, time);
    let noise = Normal::new(0.0, params.range_sigma.max(0.0)).unwrap();
    let mut detections = Vec::new();
    for k in 0..params.n_beams {
        let azimuth = normalize_angle(TAU * k as f64 / params.n_beams as f64);
        if let Some(hit) = caster.cast(pose.heading + azimuth) {
            let range = if params.range_sigma > 0.0 {
                (hit.range + noise.sample(rng)).max(1e-3)
            } else {
                hit.range
            };
            detections.push(Detection {
                range,
                azimuth,
                radial_velocity: 0.0,
                amplitude: hit.reflectivity,
            });
        }
    }
    Scan {
        sensor_kind: SensorKind::Lidar,
        timestamp: time,
        pose: *pose,
        detections,
    }
}

/// Sparse, noisy radar frame with multipath ghosts.
pub fn simulate_radar(world: &World, pose: &Pose2D, time: f64, params: &RadarParams, rng: &mut Rng) -> Scan {
    assert!(params.budget <= RADAR_MAX_DETECTIONS);
    let caster = RayCaster::new(world, [pose.x, pose.y], params.max_range, time);
    let range_noise = Normal::new(0.0, params.range_sigma.max(0.0)).unwrap();
    let az_noise = Normal::new(0.0, params.azimuth_sigma.max(0.0)).unwrap();
    let vel_noise = Normal::new(0.0, params.velocity_sigma.max(0.0)).unwrap();

    let mut hits = Vec::new();
    for k in 0..params.n_rays {
        let azimuth = TAU * (k as f64 + rng.random::<f64>()) / params.n_rays as f64;
        if let Some(hit) = caster.cast(pose.heading + azimuth) {
            hits.push((azimuth, hit));
        }
    }

    let mut detections = Vec::new();
    for (azimuth, hit) in &hits {
        let p = (params.base_p * hit.reflectivity).clamp(0.0, 1.0);
        if !rng.random_bool(p) {
            continue;
        }
        detections.push(Detection {
            range: (hit.range + range_noise.sample(rng)).max(1e-3),
            azimuth: normalize_angle(azimuth + az_noise.sample(rng)),
            radial_velocity: hit.radial_velocity + vel_noise.sample(rng),
            amplitude: hit.reflectivity * (1.0 - 0.5 * hit.range / params.max_range),
        });
    }

    if params.ghost_rate > 0.0 && !hits.is_empty() {
        let n_ghosts = Poisson::new(params.ghost_rate).unwrap().sample(rng) as usize;
        let (lo, hi) = params.ghost_extension;
        for _ in 0..n_ghosts {
            let (azimuth, hit) = hits[rng.random_range(0..hits.len())];
            detections.push(Detection {
                range: hit.range + rng.random_range(lo..hi) + range_noise.sample(rng),
                azimuth: normalize_angle(azimuth + az_noise.sample(rng)),
                radial_velocity: hit.radial_velocity + vel_noise.sample(rng),
                amplitude: rng.random_range(0.5..1.0),
            });
        }
    }

    if detections.len() > params.budget {
        let mut keep = sample(rng, detections.len(), params.budget).into_vec();
        keep.sort_unstable();
        detections = keep.into_iter().map(|i| detections[i]).collect();
    }

    Scan {
        sensor_kind: SensorKind::Radar,
        timestamp: time,
        pose: *pose,
        detections,
    }
}

/// Drops detections whose radial speed exceeds `v_thresh`.
///
/// Objects moving across the beam have near-zero radial velocity and pass.
pub fn filter_moving(scan: &Scan, v_thresh: f64) -> Scan {
    Scan {
        detections: scan
            .detections
            .iter()
            .filter(|d| d.radial_velocity.abs() <= v_thresh)
            .copied()
            .collect(),
        ..scan.clone()
    }
}

/// Simulation settings for one sensor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SensorConfig {
    Lidar(LidarParams),
    Radar(RadarParams),
}

impl SensorConfig {
    pub fn kind(&self) -> SensorKind {
        match self {
            SensorConfig::Lidar(_) => SensorKind::Lidar,
            SensorConfig::Radar(_) => SensorKind::Radar,
        }
    }

    pub fn default_for(kind: SensorKind) -> Self {
        match kind {
            SensorKind::Lidar => SensorConfig::Lidar(LidarParams::default()),
            SensorKind::Radar => SensorConfig::Radar(RadarParams::default()),
        }
    }

    pub fn simulate(&self, world: &World, pose: &Pose2D, time: f64, rng: &mut Rng) -> Scan {
        match self {
            SensorConfig::Lidar(p) => simulate_lidar(world, pose, time, p, rng),
            SensorConfig::Radar(p) => simulate_radar(world, pose, time, p, rng),
        }
    }
}

/// Simulates one scan per trajectory pose. Frame `k` draws from its own
/// random stream, so the result does not depend on scheduling.
pub fn simulate_frames(world: &World, trajectory: &Trajectory, config: &SensorConfig, seed: u64) -> Vec<Scan> {
    trajectory
        .poses
        .par_iter()
        .enumerate()
        .map(|(k, tp)| {
            let mut rng = rng::stream(seed, &[config.kind().stream_tag(), k as u64]);
            config.simulate(world, &tp.pose(), tp.t, &mut rng)
        })
        .collect()
}

/// Binary occupancy image of detections, row-major with row 0 at the top.
#[derive(Debug, Clone, PartialEq)]
pub struct InputImage {
    pub side: usize,
    pub resolution: f64,
    pub pixels: Vec<u8>,
}

impl InputImage {
    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.pixels[row * self.side + col]
    }

    pub fn lit(&self) -> usize {
        self.pixels.iter().filter(|&&p| p != 0).count()
    }

    /// `{0, 1} -> {-1, +1}`.
    pub fn normalized(&self) -> Vec<f32> {
        self.pixels
            .iter()
            .map(|&p| if p != 0 { 1.0 } else { -1.0 })
            .collect()
    }
}

/// Pixel of a vehicle-frame point in a `side`-pixel image spanning `window` meters.
///
/// The vehicle sits at the image center; `x` maps to columns and `y` to rows
/// with row 0 at the top (largest `y`). A pixel `(row, col)` coincides with
/// cell `(col, side - 1 - row)` of a vehicle-centered grid with the same
/// resolution.
pub fn pixel_of(p: [f64; 2], side: usize, window: f64) -> Option<(usize, usize)> {
    let res = window / side as f64;
    let half = window / 2.0;
    let col = ((p[0] + half) / res).floor();
    let iy = ((p[1] + half) / res).floor();
    let n = side as f64;
    if col < 0.0 || iy < 0.0 || col >= n || iy >= n {
        return None;
    }
    Some((side - 1 - iy as usize, col as usize))
}

pub fn rasterize(scan: &Scan, side: usize, window: f64) -> InputImage {
    assert!(side > 0 && window > 0.0);
    let mut pixels = vec![0u8; side * side];
    for d in &scan.detections {
        if let Some((row, col)) = pixel_of(d.position(), side, window) {
            pixels[row * side + col] = 1;
        }
    }
    InputImage {
        side,
        resolution: window / side as f64,
        pixels,
    }
}

// ---------------------------------------------------------------------------
// Persistence: `<name>.csv` rows `t,range,azimuth,radial_velocity,amplitude`
// plus a `<name>.json` sidecar with the pose and sensor kind.

#[derive(Serialize, Deserialize)]
struct DetectionRow {
    t: f64,
    range: f64,
    azimuth: f64,
    radial_velocity: f64,
    amplitude: f64,
}

#[derive(Serialize, Deserialize)]
struct ScanSidecar {
    sensor_kind: SensorKind,
    timestamp: f64,
    pose: Pose2D,
}

pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("json")
}

pub fn write_scan(scan: &Scan, csv_path: impl AsRef<Path>) -> Result<()> {
    let csv_path = csv_path.as_ref();
    // header is emitted even for empty scans
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(BufWriter::new(File::create(csv_path)?));
    w.write_record(["t", "range", "azimuth", "radial_velocity", "amplitude"])?;
    for d in &scan.detections {
        w.serialize(DetectionRow {
            t: scan.timestamp,
            range: d.range,
            azimuth: d.azimuth,
            radial_velocity: d.radial_velocity,
            amplitude: d.amplitude,
        })?;
    }
    w.flush()?;
    let side = ScanSidecar {
        sensor_kind: scan.sensor_kind,
        timestamp: scan.timestamp,
        pose: scan.pose,
    };
    serde_json::to_writer_pretty(BufWriter::new(File::create(sidecar_path(csv_path))?), &side)?;
    Ok(())
}

pub fn read_scan(csv_path: impl AsRef<Path>) -> Result<Scan> {
    let csv_path = csv_path.as_ref();
    let side: ScanSidecar = serde_json::from_reader(BufReader::new(File::open(sidecar_path(csv_path))?))?;
    let mut r = csv::Reader::from_reader(BufReader::new(File::open(csv_path)?));
    let mut detections = Vec::new();
    for row in r.deserialize() {
        let row: DetectionRow = row?;
        if !(row.range > 0.0) {
            return Err(Error::format(csv_path, format!("non-positive range {}", row.range)));
        }
        detections.push(Detection {
            range: row.range,
            azimuth: row.azimuth,
            radial_velocity: row.radial_velocity,
            amplitude: row.amplitude,
        });
    }
    Ok(Scan {
        sensor_kind: side.sensor_kind,
        timestamp: side.timestamp,
        pose: side.pose,
        detections,
    })
}
