//! Log-odds occupancy grids.
//!
//! A cell stores `ln(p / (1 - p))` for the probability that it is occupied by
//! a static obstacle; `0` is the unknown state. Independent evidence is fused
//! by adding log-odds:
//!
//! ```text
//! logit(p(m | z_0:t)) = logit(p(m | z_t)) + logit(p(m | z_0:t-1))
//! ```
//!
//! Cell `(ix, iy)` covers `[ox + ix*res, ox + (ix+1)*res) x [oy + iy*res, oy + (iy+1)*res)`
//! in world meters, so `iy` grows northwards. Image exports flip rows so that
//! row 0 is the north edge.

mod export;
mod io;

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use export::{to_gray_bytes, write_pgm, write_png, ImageFormat};
pub use io::{read_grid, read_grid_from, write_grid, write_grid_to, GRID_MAGIC};

/// Saturation bound for fused log-odds.
pub const LOGIT_CLAMP: f64 = 50.0;

/// Probabilities are clamped to `[PROB_EPS, 1 - PROB_EPS]` before conversion.
pub const PROB_EPS: f64 = 1e-6;

pub fn prob_to_logit(p: f64) -> f64 {
    let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
    (p / (1.0 - p)).ln()
}

pub fn logit_to_prob(l: f64) -> f64 {
    1.0 / (1.0 + (-l).exp())
}

/// Adds two independent log-odds beliefs, saturating at [`LOGIT_CLAMP`].
#[inline]
pub fn fuse_cell(prior: f64, update: f64) -> f64 {
    (prior + update).clamp(-LOGIT_CLAMP, LOGIT_CLAMP)
}

/// Wraps an angle into `(-pi, pi]`.
pub fn normalize_angle(a: f64) -> f64 {
    let a = a.rem_euclid(TAU);
    if a > PI {
        a - TAU
    } else {
        a
    }
}

/// Planar pose: position in meters, heading in radians (`(-pi, pi]`).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose2D {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

impl Pose2D {
    pub fn new(x: f64, y: f64, heading: f64) -> Self {
        Self {
            x,
            y,
            heading: normalize_angle(heading),
        }
    }

    /// Maps a point from the pose's local frame (x forward, y left) into the world.
    #[inline]
    pub fn to_world(&self, local: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.heading.sin_cos();
        [
            self.x + c * local[0] - s * local[1],
            self.y + s * local[0] + c * local[1],
        ]
    }

    #[inline]
    pub fn to_local(&self, world: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.heading.sin_cos();
        let dx = world[0] - self.x;
        let dy = world[1] - self.y;
        [c * dx + s * dy, -s * dx + c * dy]
    }

    /// `self ⊕ delta`, with `delta` expressed in this pose's frame.
    pub fn compose(&self, delta: &Pose2D) -> Pose2D {
        let [x, y] = self.to_world([delta.x, delta.y]);
        Pose2D::new(x, y, self.heading + delta.heading)
    }

    /// The relative motion taking `self` to `other`, in `self`'s frame.
    pub fn between(&self, other: &Pose2D) -> Pose2D {
        let [x, y] = self.to_local([other.x, other.y]);
        Pose2D::new(x, y, other.heading - self.heading)
    }
}

/// Trinarized occupancy state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CellClass {
    Free,
    Unknown,
    Occupied,
}

impl CellClass {
    pub const ALL: [CellClass; 3] = [CellClass::Free, CellClass::Unknown, CellClass::Occupied];

    /// Classifies a log-odds value; ties at `±tau` are unknown.
    #[inline]
    pub fn from_logit(l: f64, tau: f64) -> Self {
        if l > tau {
            CellClass::Occupied
        } else if l < -tau {
            CellClass::Free
        } else {
            CellClass::Unknown
        }
    }

    pub fn index(self) -> usize {
        match self {
            CellClass::Free => 0,
            CellClass::Unknown => 1,
            CellClass::Occupied => 2,
        }
    }
}

/// Counters returned by [`OccupancyGrid::fuse`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FuseStats {
    /// Target cells that received a source value.
    pub updated: usize,
    /// Source cells whose transformed center fell outside the target.
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    width: usize,
    height: usize,
    resolution: f64,
    origin: [f64; 2],
    cells: Vec<f64>,
}

impl OccupancyGrid {
    /// An all-unknown grid.
    pub fn new(width: usize, height: usize, resolution: f64, origin: [f64; 2]) -> Result<Self> {
        Self::from_cells(width, height, resolution, origin, vec![0.0; width * height])
    }

    pub fn from_cells(
        width: usize,
        height: usize,
        resolution: f64,
        origin: [f64; 2],
        cells: Vec<f64>,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidGrid(format!("empty grid {width}x{height}")));
        }
        if !(resolution > 0.0) || !resolution.is_finite() {
            return Err(Error::InvalidGrid(format!("resolution {resolution}")));
        }
        if !origin.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidGrid("non-finite origin".into()));
        }
        if cells.len() != width * height {
            return Err(Error::InvalidGrid(format!(
                "{} cells for a {width}x{height} grid",
                cells.len()
            )));
        }
        if cells.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidGrid("non-finite cell".into()));
        }
        Ok(Self {
            width,
            height,
            resolution,
            origin,
            cells,
        })
    }

    /// A square grid in a vehicle frame, centered on the frame origin.
    pub fn vehicle_centered(side: usize, resolution: f64) -> Result<Self> {
        let half = side as f64 * resolution / 2.0;
        Self::new(side, side, resolution, [-half, -half])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn origin(&self) -> [f64; 2] {
        self.origin
    }

    pub fn cells(&self) -> &[f64] {
        &self.cells
    }

    /// Raw mutable access. Callers must keep values finite.
    pub fn cells_mut(&mut self) -> &mut [f64] {
        &mut self.cells
    }

    pub fn into_cells(self) -> Vec<f64> {
        self.cells
    }

    pub fn same_geometry(&self, other: &OccupancyGrid) -> bool {
        self.width == other.width
            && self.height == other.height
            && (self.resolution - other.resolution).abs() <= 1e-9
            && (self.origin[0] - other.origin[0]).abs() <= 1e-9
            && (self.origin[1] - other.origin[1]).abs() <= 1e-9
    }

    #[inline]
    pub fn index(&self, ix: usize, iy: usize) -> usize {
        iy * self.width + ix
    }

    #[inline]
    pub fn get(&self, ix: usize, iy: usize) -> f64 {
        self.cells[self.index(ix, iy)]
    }

    #[inline]
    pub fn set(&mut self, ix: usize, iy: usize, value: f64) {
        let i = self.index(ix, iy);
        self.cells[i] = value;
    }

    /// Reads a cell by signed index, treating everything outside as unknown.
    #[inline]
    pub fn get_or_unknown(&self, ix: i64, iy: i64) -> f64 {
        if ix < 0 || iy < 0 || ix >= self.width as i64 || iy >= self.height as i64 {
            0.0
        } else {
            self.get(ix as usize, iy as usize)
        }
    }

    /// Fuses `update` into one cell.
    #[inline]
    pub fn fuse_at(&mut self, ix: usize, iy: usize, update: f64) {
        let i = self.index(ix, iy);
        self.cells[i] = fuse_cell(self.cells[i], update);
    }

    #[inline]
    pub fn cell_center(&self, ix: usize, iy: usize) -> [f64; 2] {
        [
            self.origin[0] + (ix as f64 + 0.5) * self.resolution,
            self.origin[1] + (iy as f64 + 0.5) * self.resolution,
        ]
    }

    /// Signed cell index containing a point (may lie outside the grid).
    #[inline]
    pub fn cell_index_of(&self, p: [f64; 2]) -> (i64, i64) {
        (
            ((p[0] - self.origin[0]) / self.resolution).floor() as i64,
            ((p[1] - self.origin[1]) / self.resolution).floor() as i64,
        )
    }

    #[inline]
    pub fn cell_of(&self, p: [f64; 2]) -> Option<(usize, usize)> {
        let (ix, iy) = self.cell_index_of(p);
        self.contains_index(ix, iy)
            .then_some((ix as usize, iy as usize))
    }

    #[inline]
    pub fn contains_index(&self, ix: i64, iy: i64) -> bool {
        ix >= 0 && iy >= 0 && (ix as usize) < self.width && (iy as usize) < self.height
    }

    pub fn probability(&self, ix: usize, iy: usize) -> f64 {
        logit_to_prob(self.get(ix, iy))
    }

    /// Cells in image order: row 0 is the north (max-y) edge.
    pub fn to_image_rows(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.cells.len());
        for iy in (0..self.height).rev() {
            out.extend_from_slice(&self.cells[iy * self.width..(iy + 1) * self.width]);
        }
        out
    }

    /// Inverse of [`OccupancyGrid::to_image_rows`].
    pub fn from_image_rows(
        width: usize,
        height: usize,
        resolution: f64,
        origin: [f64; 2],
        rows: &[f64],
    ) -> Result<Self> {
        if rows.len() != width * height {
            return Err(Error::InvalidGrid(format!(
                "{} values for a {width}x{height} image",
                rows.len()
            )));
        }
        let mut cells = Vec::with_capacity(rows.len());
        for iy in 0..height {
            let r = height - 1 - iy;
            cells.extend_from_slice(&rows[r * width..(r + 1) * width]);
        }
        Self::from_cells(width, height, resolution, origin, cells)
    }

    /// Fuses a patch expressed in a vehicle frame into this world-anchored grid.
    ///
    /// Every target cell whose center falls inside the transformed patch pulls
    /// the nearest source cell (the one containing the back-projected center)
    /// and adds it via [`fuse_cell`].
    pub fn fuse(&mut self, source: &OccupancyGrid, pose: &Pose2D) -> Result<FuseStats> {
        if (self.resolution - source.resolution).abs() > 1e-9 {
            return Err(Error::ResolutionMismatch {
                target_res: self.resolution,
                source_res: source.resolution,
            });
        }
        let mut stats = FuseStats::default();

        for iy in 0..source.height {
            for ix in 0..source.width {
                let p = pose.to_world(source.cell_center(ix, iy));
                let (tx, ty) = self.cell_index_of(p);
                if !self.contains_index(tx, ty) {
                    stats.skipped += 1;
                }
            }
        }

        let Some((x0, x1, y0, y1)) = self.footprint(source, pose) else {
            return Ok(stats);
        };
        let res = source.resolution;
        let (s, c) = pose.heading.sin_cos();
        for ty in y0..=y1 {
            for tx in x0..=x1 {
                let [wx, wy] = self.cell_center(tx, ty);
                let dx = wx - pose.x;
                let dy = wy - pose.y;
                let lx = c * dx + s * dy;
                let ly = -s * dx + c * dy;
                let sx = ((lx - source.origin[0]) / res).floor();
                let sy = ((ly - source.origin[1]) / res).floor();
                if sx < 0.0 || sy < 0.0 || sx >= source.width as f64 || sy >= source.height as f64 {
                    continue;
                }
                let v = source.get(sx as usize, sy as usize);
                stats.updated += 1;
                if v != 0.0 {
                    self.fuse_at(tx, ty, v);
                }
            }
        }
        Ok(stats)
    }

    /// Cell-index bounding box (inclusive) of a transformed patch, clipped to this grid.
    fn footprint(&self, source: &OccupancyGrid, pose: &Pose2D) -> Option<(usize, usize, usize, usize)> {
        let [ox, oy] = source.origin;
        let ex = ox + source.width as f64 * source.resolution;
        let ey = oy + source.height as f64 * source.resolution;
        let corners = [[ox, oy], [ex, oy], [ox, ey], [ex, ey]].map(|p| pose.to_world(p));
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for p in corners {
            for k in 0..2 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        let (ax, ay) = self.cell_index_of(lo);
        let (bx, by) = self.cell_index_of(hi);
        let ax = ax.max(0);
        let ay = ay.max(0);
        let bx = bx.min(self.width as i64 - 1);
        let by = by.min(self.height as i64 - 1);
        (ax <= bx && ay <= by).then_some((ax as usize, bx as usize, ay as usize, by as usize))
    }

    /// Cuts a vehicle-centered, heading-aligned square patch out of this map.
    ///
    /// Each patch cell takes the map cell containing its transformed center;
    /// samples outside the map read as unknown.
    pub fn extract_patch(&self, pose: &Pose2D, side: usize) -> Result<OccupancyGrid> {
        let mut patch = OccupancyGrid::vehicle_centered(side, self.resolution)?;
        let mut inside = 0usize;
        for iy in 0..side {
            for ix in 0..side {
                let p = pose.to_world(patch.cell_center(ix, iy));
                if let Some((mx, my)) = self.cell_of(p) {
                    inside += 1;
                    patch.set(ix, iy, self.get(mx, my));
                }
            }
        }
        if inside == 0 {
            return Err(Error::OutOfBounds);
        }
        Ok(patch)
    }

    pub fn trinarize(&self, tau: f64) -> Vec<CellClass> {
        self.cells
            .iter()
            .map(|&l| CellClass::from_logit(l, tau))
            .collect()
    }
}

/// Free function form of [`OccupancyGrid::fuse`].
pub fn fuse_grid(target: &mut OccupancyGrid, source: &OccupancyGrid, pose: &Pose2D) -> Result<FuseStats> {
    target.fuse(source, pose)
}

/// Free function form of [`OccupancyGrid::extract_patch`].
pub fn extract_patch(map: &OccupancyGrid, pose: &Pose2D, side: usize) -> Result<OccupancyGrid> {
    map.extract_patch(pose, side)
}

pub fn trinarize(grid: &OccupancyGrid, tau: f64) -> Vec<CellClass> {
    grid.trinarize(tau)
}
