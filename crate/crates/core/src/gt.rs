//! Ground-truth occupancy from noise-free LiDAR through an ideal inverse
//! sensor model: cells between the sensor and a return are free, the return's
//! cell is occupied. Single-shot grids are fused into a world map with
//! log-odds addition and label patches are cut back out at each pose.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{OccupancyGrid, Pose2D};
use crate::sensor::{Scan, SensorKind};
use crate::world::{Bounds, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdealIsmParams {
    /// Log-odds added to every traversed cell (negative).
    pub l_free: f64,
    /// Log-odds added to the return's cell (positive).
    pub l_occ: f64,
    /// Returns farther than this are ignored.
    pub max_range: f64,
}

impl Default for IdealIsmParams {
    fn default() -> Self {
        Self {
            l_free: -0.41,
            l_occ: 1.73,
            max_range: 20.0,
        }
    }
}

impl IdealIsmParams {
    fn validate(&self) -> Result<()> {
        if !(self.l_free < 0.0 && self.l_occ > 0.0 && self.max_range > 0.0) {
            return Err(Error::InvalidSpec(format!("ideal ISM parameters {self:?}")));
        }
        Ok(())
    }
}

/// 8-connected integer line from `from` to `to`, both inclusive.
///
/// Along the major axis every cell is visited once; the minor coordinate at
/// step `k` of `n` is `round(k * d_minor / n)` with halves rounded away from
/// `from`.
pub fn bresenham_cells(from: (i64, i64), to: (i64, i64)) -> Vec<(i64, i64)> {
    let (dx, dy) = (to.0 - from.0, to.1 - from.1);
    let (sx, sy) = (dx.signum(), dy.signum());
    let (ax, ay) = (dx.abs(), dy.abs());
    let x_major = ax >= ay;
    let (n, m) = if x_major { (ax, ay) } else { (ay, ax) };

    let mut cells = Vec::with_capacity(n as usize + 1);
    let (mut x, mut y) = from;
    cells.push((x, y));
    // error term tracks 2*k*m + n modulo 2n
    let mut err = n;
    for _ in 0..n {
        err += 2 * m;
        let step_minor = err >= 2 * n;
        if step_minor {
            err -= 2 * n;
        }
        if x_major {
            x += sx;
            if step_minor {
                y += sy;
            }
        } else {
            y += sy;
            if step_minor {
                x += sx;
            }
        }
        cells.push((x, y));
    }
    cells
}

/// Occupancy estimate of one LiDAR scan in a vehicle-centered grid.
pub fn single_shot_grid(scan: &Scan, params: &IdealIsmParams, side: usize, resolution: f64) -> Result<OccupancyGrid> {
    if scan.sensor_kind != SensorKind::Lidar {
        return Err(Error::WrongSensor {
            expected: SensorKind::Lidar.to_string(),
            actual: scan.sensor_kind.to_string(),
        });
    }
    params.validate()?;
    let mut grid = OccupancyGrid::vehicle_centered(side, resolution)?;
    let sensor = grid.cell_index_of([0.0, 0.0]);
    for d in &scan.detections {
        if d.range > params.max_range {
            continue;
        }
        let end = grid.cell_index_of(d.position());
        let ray = bresenham_cells(sensor, end);
        let (&last, free) = ray.split_last().expect("ray has at least one cell");
        for &(ix, iy) in free {
            if grid.contains_index(ix, iy) {
                grid.fuse_at(ix as usize, iy as usize, params.l_free);
            }
        }
        if grid.contains_index(last.0, last.1) {
            grid.fuse_at(last.0 as usize, last.1 as usize, params.l_occ);
        }
    }
    Ok(grid)
}

/// Side length of a single-shot grid that holds every return within range.
pub fn single_shot_side(params: &IdealIsmParams, resolution: f64) -> usize {
    2 * (params.max_range / resolution).ceil() as usize + 2
}

/// Geometry of a world-anchored map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapSpec {
    pub origin: [f64; 2],
    pub width: usize,
    pub height: usize,
    pub resolution: f64,
}

impl MapSpec {
    pub fn covering(bounds: &Bounds, resolution: f64) -> MapSpec {
        let [w, h] = bounds.size();
        MapSpec {
            origin: bounds.min,
            width: (w / resolution).ceil().max(1.0) as usize,
            height: (h / resolution).ceil().max(1.0) as usize,
            resolution,
        }
    }

    pub fn blank(&self) -> Result<OccupancyGrid> {
        OccupancyGrid::new(self.width, self.height, self.resolution, self.origin)
    }
}

/// Fuses the single-shot grid of every scan, placed at its trajectory pose.
pub fn accumulate_map(
    scans: &[Scan],
    trajectory: &Trajectory,
    params: &IdealIsmParams,
    map_spec: &MapSpec,
) -> Result<OccupancyGrid> {
    check_aligned(scans, trajectory)?;
    let poses: Vec<Pose2D> = trajectory.poses.iter().map(|p| p.pose()).collect();
    accumulate_map_at(scans, &poses, params, map_spec)
}

/// Like [`accumulate_map`] with explicit (for example dead-reckoned) poses.
pub fn accumulate_map_at(
    scans: &[Scan],
    poses: &[Pose2D],
    params: &IdealIsmParams,
    map_spec: &MapSpec,
) -> Result<OccupancyGrid> {
    if scans.len() != poses.len() {
        return Err(Error::LengthMismatch {
            what: "scans vs poses",
            left: scans.len(),
            right: poses.len(),
        });
    }
    let side = single_shot_side(params, map_spec.resolution);
    let shots: Vec<OccupancyGrid> = scans
        .par_iter()
        .map(|s| single_shot_grid(s, params, side, map_spec.resolution))
        .collect::<Result<_>>()?;
    let mut map = map_spec.blank()?;
    for (shot, pose) in shots.iter().zip(poses) {
        map.fuse(shot, pose)?;
    }
    Ok(map)
}

pub(crate) fn check_aligned(scans: &[Scan], trajectory: &Trajectory) -> Result<()> {
    if scans.len() != trajectory.len() {
        return Err(Error::LengthMismatch {
            what: "scans vs trajectory",
            left: scans.len(),
            right: trajectory.len(),
        });
    }
    for (s, p) in scans.iter().zip(&trajectory.poses) {
        if (s.timestamp - p.t).abs() > 1e-6 {
            return Err(Error::InvalidSpec(format!(
                "scan at t={} does not match trajectory pose at t={}",
                s.timestamp, p.t
            )));
        }
    }
    Ok(())
}

/// Label patches cut at each trajectory pose.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelCut {
    /// `(pose index, patch)` for every pose whose footprint touches the map.
    pub patches: Vec<(usize, OccupancyGrid)>,
    pub skipped: usize,
}

pub fn cut_labels(map: &OccupancyGrid, trajectory: &Trajectory, side: usize) -> Result<LabelCut> {
    let mut patches = Vec::with_capacity(trajectory.len());
    let mut skipped = 0;
    for (k, tp) in trajectory.poses.iter().enumerate() {
        match map.extract_patch(&tp.pose(), side) {
            Ok(p) => patches.push((k, p)),
            Err(Error::OutOfBounds) => skipped += 1,
            Err(e) => return Err(e),
        }
    }
    Ok(LabelCut { patches, skipped })
}
