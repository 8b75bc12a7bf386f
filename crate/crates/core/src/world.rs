//! Procedural 2D street worlds.
//!
//! A world is a single winding street corridor. Its centerline is built from
//! straight and circular sections; each side of the street is partitioned into
//! chunks holding one feature each: a row of parked cars, a building facade,
//! a facade with an alley opening, or a curved wall. Moving vehicles follow
//! the opposite lane back and forth.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Pose2D;
use crate::rng;

/// Lateral position of the ego lane, meters (right of centerline is negative).
pub const EGO_LANE_OFFSET: f64 = -1.5;
/// Lateral position of the lane used by movers.
pub const MOVER_LANE_OFFSET: f64 = 2.0;
/// Minimum distance between a trajectory pose and any static segment.
pub const MIN_CLEARANCE: f64 = 1.5;

const ROUTE_SPACING: f64 = 0.5;
const EGO_SPEED: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Car,
    Facade,
    CurvedWall,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub a: [f64; 2],
    pub b: [f64; 2],
    pub reflectivity: f64,
    /// Index of the feature (car, facade chunk, wall) this segment belongs to.
    pub feature: u32,
    pub kind: FeatureKind,
}

impl Segment {
    pub fn length(&self) -> f64 {
        dist(self.a, self.b)
    }

    pub fn distance_to(&self, p: [f64; 2]) -> f64 {
        point_segment_distance(p, self.a, self.b)
    }
}

/// A vehicle shuttling along a polyline at constant speed.
///
/// Its arc-length position is a triangle wave of time, so the track is
/// piecewise linear in time and never stops.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mover {
    pub path: Vec<[f64; 2]>,
    pub speed: f64,
    pub phase: f64,
    pub half_length: f64,
    pub reflectivity: f64,
}

/// Instantaneous mover geometry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MoverState {
    pub center: [f64; 2],
    pub a: [f64; 2],
    pub b: [f64; 2],
    pub velocity: [f64; 2],
}

impl Mover {
    pub fn path_length(&self) -> f64 {
        polyline_length(&self.path)
    }

    pub fn state_at(&self, t: f64) -> MoverState {
        let len = self.path_length();
        let u = (self.phase + self.speed * t).rem_euclid(2.0 * len);
        let (s, dir) = if u <= len { (u, 1.0) } else { (2.0 * len - u, -1.0) };
        let (center, tangent) = polyline_point(&self.path, s);
        let h = self.half_length;
        MoverState {
            center,
            a: [center[0] - h * tangent[0], center[1] - h * tangent[1]],
            b: [center[0] + h * tangent[0], center[1] + h * tangent[1]],
            velocity: [dir * self.speed * tangent[0], dir * self.speed * tangent[1]],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl Bounds {
    pub fn contains(&self, p: [f64; 2]) -> bool {
        p[0] >= self.min[0] && p[0] <= self.max[0] && p[1] >= self.min[1] && p[1] <= self.max[1]
    }

    pub fn size(&self) -> [f64; 2] {
        [self.max[0] - self.min[0], self.max[1] - self.min[1]]
    }
}

/// Relative frequency of each feature kind along the street sides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneMix {
    pub parked_cars: f64,
    pub buildings: f64,
    pub alleys: f64,
    pub curved_walls: f64,
    /// Centerline length in meters.
    #[serde(default = "default_route_length")]
    pub route_length: f64,
    #[serde(default = "default_max_movers")]
    pub max_movers: usize,
}

fn default_route_length() -> f64 {
    140.0
}

fn default_max_movers() -> usize {
    3
}

impl Default for SceneMix {
    fn default() -> Self {
        Self {
            parked_cars: 0.4,
            buildings: 0.3,
            alleys: 0.2,
            curved_walls: 0.1,
            route_length: default_route_length(),
            max_movers: default_max_movers(),
        }
    }
}

impl SceneMix {
    pub fn only(kind: &str) -> Self {
        let mut m = SceneMix {
            parked_cars: 0.0,
            buildings: 0.0,
            alleys: 0.0,
            curved_walls: 0.0,
            ..SceneMix::default()
        };
        match kind {
            "parked_cars" => m.parked_cars = 1.0,
            "buildings" => m.buildings = 1.0,
            "alleys" => m.alleys = 1.0,
            "curved_walls" => m.curved_walls = 1.0,
            other => panic!("unknown feature kind {other}"),
        }
        m
    }

    fn validate(&self) -> Result<()> {
        let w = self.weights();
        if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidSpec("weights must be finite and non-negative".into()));
        }
        if w.iter().sum::<f64>() <= 0.0 {
            return Err(Error::InvalidSpec("all weights are zero".into()));
        }
        if !(self.route_length >= 30.0) {
            return Err(Error::InvalidSpec(format!(
                "route_length {} is shorter than 30 m",
                self.route_length
            )));
        }
        if self.max_movers > 3 {
            return Err(Error::InvalidSpec("at most 3 movers".into()));
        }
        Ok(())
    }

    fn weights(&self) -> [f64; 4] {
        [self.parked_cars, self.buildings, self.alleys, self.curved_walls]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub seed: u64,
    pub bounds: Bounds,
    /// Street centerline, sampled every half meter.
    pub route: Vec<[f64; 2]>,
    pub segments: Vec<Segment>,
    pub movers: Vec<Mover>,
}

#[derive(Debug, Clone, Copy)]
enum Chunk {
    Cars,
    Building,
    Alley,
    CurvedWall,
}

struct Builder<'a> {
    rng: &'a mut rng::Rng,
    segments: Vec<Segment>,
    next_feature: u32,
}

impl Builder<'_> {
    fn feature(&mut self) -> u32 {
        self.next_feature += 1;
        self.next_feature - 1
    }

    fn polyline(&mut self, pts: &[[f64; 2]], reflectivity: f64, kind: FeatureKind, feature: u32) {
        for w in pts.windows(2) {
            if dist(w[0], w[1]) > 1e-6 {
                self.segments.push(Segment {
                    a: w[0],
                    b: w[1],
                    reflectivity,
                    feature,
                    kind,
                });
            }
        }
    }

    /// Facade vertices between arc lengths `s0` and `s1` of an offset curve.
    fn facade_points(curve: &OffsetCurve, s0: f64, s1: f64) -> Vec<[f64; 2]> {
        let n = ((s1 - s0) / 2.0).ceil().max(1.0) as usize;
        (0..=n)
            .map(|k| curve.point(s0 + (s1 - s0) * k as f64 / n as f64).0)
            .collect()
    }

    fn building(&mut self, curve: &OffsetCurve, s0: f64, s1: f64) {
        let refl = self.rng.random_range(0.4..0.7);
        let id = self.feature();
        let pts = Self::facade_points(curve, s0, s1);
        self.polyline(&pts, refl, FeatureKind::Facade, id);
    }

    fn alley(&mut self, curve: &OffsetCurve, side: f64, s0: f64, s1: f64) {
        let refl = self.rng.random_range(0.4..0.7);
        let id = self.feature();
        let gap = self.rng.random_range(2.2..3.8);
        let g0 = self.rng.random_range(s0 + 3.0..s1 - 3.0 - gap);
        let g1 = g0 + gap;
        let left = Self::facade_points(curve, s0, g0);
        let right = Self::facade_points(curve, g1, s1);
        self.polyline(&left, refl, FeatureKind::Facade, id);
        self.polyline(&right, refl, FeatureKind::Facade, id);
        // side walls running away from the street
        for (edge, s) in [(left[left.len() - 1], g0), (right[0], g1)] {
            let (_, t) = curve.point(s);
            let out = [-t[1] * side, t[0] * side];
            let depth = self.rng.random_range(3.0..6.0);
            let end = [edge[0] + depth * out[0], edge[1] + depth * out[1]];
            self.polyline(&[edge, end], refl, FeatureKind::Facade, id);
        }
    }

    fn curved_wall(&mut self, center: &Polyline, offset: f64, side: f64, s0: f64, s1: f64) {
        let refl = self.rng.random_range(0.3..0.6);
        let id = self.feature();
        let bulge = self.rng.random_range(2.0..5.0);
        let n = ((s1 - s0) / 1.0).ceil().max(2.0) as usize;
        let pts: Vec<_> = (0..=n)
            .map(|k| {
                let u = k as f64 / n as f64;
                let d = offset + bulge * (PI * u).sin();
                center.offset_point(s0 + (s1 - s0) * u, side * d)
            })
            .collect();
        self.polyline(&pts, refl, FeatureKind::CurvedWall, id);
    }

    fn cars(&mut self, curve: &OffsetCurve, s0: f64, s1: f64) {
        let mut s = s0 + self.rng.random_range(0.0..2.0);
        loop {
            let length = self.rng.random_range(4.0..5.0);
            let width = self.rng.random_range(1.8..2.0);
            if s + length > s1 {
                break;
            }
            if self.rng.random_bool(0.85) {
                let (c, t) = curve.point(s + length / 2.0);
                let yaw = t[1].atan2(t[0]) + self.rng.random_range(-0.05..0.05);
                let refl = self.rng.random_range(0.8..1.0);
                let id = self.feature();
                let corners = rectangle(c, yaw, length, width);
                let closed = [corners[0], corners[1], corners[2], corners[3], corners[0]];
                self.polyline(&closed, refl, FeatureKind::Car, id);
            }
            s += length + self.rng.random_range(0.8..3.0);
        }
    }
}

/// Generates a world; identical `(seed, mix)` always yield an identical world.
pub fn generate_world(seed: u64, mix: &SceneMix) -> Result<World> {
    mix.validate()?;
    let mut rng = rng::stream(seed, &[0x57_4f_52_4c_44]);

    let route = centerline(&mut rng, mix.route_length);
    let center = Polyline::new(route.clone());
    let facade_offset = rng.random_range(8.0..9.5);
    let curb_offset = facade_offset - rng.random_range(1.6..2.4);

    let weights = mix.weights();
    let total: f64 = weights.iter().sum();
    let mut b = Builder {
        rng: &mut rng,
        segments: Vec::new(),
        next_feature: 0,
    };
    for side in [1.0, -1.0] {
        let facade = OffsetCurve::new(&center, side * facade_offset);
        let curb = OffsetCurve::new(&center, side * curb_offset);
        // chunks are laid out in centerline arc length
        let mut s = 0.0;
        while s < center.length - 8.0 {
            let len = b.rng.random_range(12.0..30.0f64).min(center.length - s);
            let s1 = s + len;
            let mut pick = b.rng.random_range(0.0..total);
            let mut kind = Chunk::CurvedWall;
            for (w, k) in weights.iter().zip([Chunk::Cars, Chunk::Building, Chunk::Alley, Chunk::CurvedWall]) {
                if pick < *w {
                    kind = k;
                    break;
                }
                pick -= w;
            }
            let (f0, f1) = (facade.from_center(s), facade.from_center(s1));
            match kind {
                Chunk::Cars => {
                    let (c0, c1) = (curb.from_center(s), curb.from_center(s1));
                    b.cars(&curb, c0, c1);
                }
                Chunk::Building => b.building(&facade, f0, f1),
                Chunk::Alley if f1 - f0 > 10.0 => b.alley(&facade, side, f0, f1),
                Chunk::Alley => b.building(&facade, f0, f1),
                Chunk::CurvedWall => b.curved_wall(&center, facade_offset, side, s, s1),
            }
            s = s1;
        }
    }
    let segments = b.segments;

    let lane = OffsetCurve::new(&center, MOVER_LANE_OFFSET);
    let n_movers = rng.random_range(0..=mix.max_movers);
    let movers = (0..n_movers)
        .map(|_| Mover {
            path: lane.points.clone(),
            speed: rng.random_range(1.0..8.0),
            phase: rng.random_range(0.0..lane.length),
            half_length: rng.random_range(2.0..2.4),
            reflectivity: 0.9,
        })
        .collect();

    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for p in route.iter().chain(segments.iter().flat_map(|s| [&s.a, &s.b])) {
        for k in 0..2 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    let margin = 2.0;
    Ok(World {
        seed,
        bounds: Bounds {
            min: [lo[0] - margin, lo[1] - margin],
            max: [hi[0] + margin, hi[1] + margin],
        },
        route,
        segments,
        movers,
    })
}

/// Straight and circular sections with the cumulative heading kept within
/// a quarter turn of the start, so the corridor never folds back on itself.
fn centerline(rng: &mut rng::Rng, length: f64) -> Vec<[f64; 2]> {
    let h0 = rng.random_range(-PI..PI);
    let mut heading = h0;
    let mut p = [0.0, 0.0];
    let mut pts = vec![p];
    let mut travelled = 0.0;
    let mut straight = true;
    while travelled < length {
        let (sec_len, curvature) = if straight {
            (rng.random_range(15.0..35.0), 0.0)
        } else {
            let radius = rng.random_range(25.0..45.0);
            let turn: f64 = rng.random_range(25f64.to_radians()..70f64.to_radians());
            let rel = heading - h0;
            let sign = if rel + turn > FRAC_PI_2 {
                -1.0
            } else if rel - turn < -FRAC_PI_2 {
                1.0
            } else if rng.random_bool(0.5) {
                1.0
            } else {
                -1.0
            };
            (radius * turn, sign / radius)
        };
        straight = !straight;
        let n = (sec_len / ROUTE_SPACING).round().max(1.0) as usize;
        let ds = sec_len / n as f64;
        for _ in 0..n {
            let mid = heading + 0.5 * ds * curvature;
            p = [p[0] + ds * mid.cos(), p[1] + ds * mid.sin()];
            heading += ds * curvature;
            pts.push(p);
            travelled += ds;
            if travelled >= length {
                break;
            }
        }
    }
    pts
}

fn rectangle(c: [f64; 2], yaw: f64, length: f64, width: f64) -> [[f64; 2]; 4] {
    let (s, co) = yaw.sin_cos();
    let (hl, hw) = (length / 2.0, width / 2.0);
    [[-hl, -hw], [hl, -hw], [hl, hw], [-hl, hw]]
        .map(|[x, y]| [c[0] + co * x - s * y, c[1] + s * x + co * y])
}

/// Polyline with cumulative arc length.
#[derive(Debug, Clone)]
struct Polyline {
    points: Vec<[f64; 2]>,
    cum: Vec<f64>,
    length: f64,
}

impl Polyline {
    fn new(points: Vec<[f64; 2]>) -> Self {
        let mut cum = Vec::with_capacity(points.len());
        let mut acc = 0.0;
        cum.push(0.0);
        for w in points.windows(2) {
            acc += dist(w[0], w[1]);
            cum.push(acc);
        }
        Self {
            points,
            cum,
            length: acc,
        }
    }

    /// Point and unit tangent at arc length `s` (clamped).
    fn point(&self, s: f64) -> ([f64; 2], [f64; 2]) {
        let s = s.clamp(0.0, self.length);
        let i = match self.cum.binary_search_by(|c| c.total_cmp(&s)) {
            Ok(i) => i.min(self.points.len() - 2),
            Err(i) => i.saturating_sub(1).min(self.points.len() - 2),
        };
        let (a, b) = (self.points[i], self.points[i + 1]);
        let seg = self.cum[i + 1] - self.cum[i];
        let u = if seg > 0.0 { (s - self.cum[i]) / seg } else { 0.0 };
        let t = if seg > 0.0 {
            [(b[0] - a[0]) / seg, (b[1] - a[1]) / seg]
        } else {
            [1.0, 0.0]
        };
        ([a[0] + u * (b[0] - a[0]), a[1] + u * (b[1] - a[1])], t)
    }

    /// Point displaced by `d` along the left normal at arc length `s`.
    fn offset_point(&self, s: f64, d: f64) -> [f64; 2] {
        let (p, t) = self.point(s);
        [p[0] - d * t[1], p[1] + d * t[0]]
    }
}

/// Curve parallel to a centerline, reparametrized by its own arc length.
struct OffsetCurve {
    points: Vec<[f64; 2]>,
    line: Polyline,
    /// centerline arc length of each vertex
    center_s: Vec<f64>,
    length: f64,
}

impl OffsetCurve {
    fn new(center: &Polyline, d: f64) -> Self {
        let step = 0.25;
        let n = (center.length / step).ceil() as usize;
        let center_s: Vec<f64> = (0..=n).map(|k| center.length * k as f64 / n as f64).collect();
        let points: Vec<_> = center_s.iter().map(|&s| center.offset_point(s, d)).collect();
        let line = Polyline::new(points.clone());
        let length = line.length;
        Self {
            points,
            line,
            center_s,
            length,
        }
    }

    fn point(&self, s: f64) -> ([f64; 2], [f64; 2]) {
        self.line.point(s)
    }

    /// Own arc length at the vertex closest to centerline arc length `s`.
    fn from_center(&self, s: f64) -> f64 {
        let i = match self.center_s.binary_search_by(|c| c.total_cmp(&s)) {
            Ok(i) | Err(i) => i.min(self.center_s.len() - 1),
        };
        self.line.cum[i]
    }
}

#[inline]
pub fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

pub fn point_segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let e = [b[0] - a[0], b[1] - a[1]];
    let len2 = e[0] * e[0] + e[1] * e[1];
    let u = if len2 > 0.0 {
        (((p[0] - a[0]) * e[0] + (p[1] - a[1]) * e[1]) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    dist(p, [a[0] + u * e[0], a[1] + u * e[1]])
}

fn polyline_length(pts: &[[f64; 2]]) -> f64 {
    pts.windows(2).map(|w| dist(w[0], w[1])).sum()
}

fn polyline_point(pts: &[[f64; 2]], s: f64) -> ([f64; 2], [f64; 2]) {
    let mut acc = 0.0;
    for w in pts.windows(2) {
        let l = dist(w[0], w[1]);
        if l > 0.0 && acc + l >= s {
            let u = (s - acc) / l;
            let t = [(w[1][0] - w[0][0]) / l, (w[1][1] - w[0][1]) / l];
            return ([w[0][0] + u * l * t[0], w[0][1] + u * l * t[1]], t);
        }
        acc += l;
    }
    let n = pts.len();
    let l = dist(pts[n - 2], pts[n - 1]).max(f64::MIN_POSITIVE);
    (
        pts[n - 1],
        [(pts[n - 1][0] - pts[n - 2][0]) / l, (pts[n - 1][1] - pts[n - 2][1]) / l],
    )
}

// ---------------------------------------------------------------------------
// Ray casting

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayHit {
    pub range: f64,
    pub reflectivity: f64,
    pub is_mover: bool,
    /// Component of the target velocity along the ray; positive = receding.
    pub radial_velocity: f64,
}

/// Ray-segment intersection distance, if the ray `origin + t*dir` (t > 0) hits `[a, b]`.
#[inline]
pub fn ray_segment(origin: [f64; 2], dir: [f64; 2], a: [f64; 2], b: [f64; 2]) -> Option<f64> {
    let e = [b[0] - a[0], b[1] - a[1]];
    let denom = dir[0] * e[1] - dir[1] * e[0];
    if denom.abs() < 1e-12 {
        return None;
    }
    let w = [a[0] - origin[0], a[1] - origin[1]];
    let t = (w[0] * e[1] - w[1] * e[0]) / denom;
    let u = (w[0] * dir[1] - w[1] * dir[0]) / denom;
    (t > 0.0 && (0.0..=1.0).contains(&u)).then_some(t)
}

struct Target {
    a: [f64; 2],
    b: [f64; 2],
    reflectivity: f64,
    velocity: Option<[f64; 2]>,
}

/// Segments near one sensor position at one instant, ready for many rays.
pub struct RayCaster {
    origin: [f64; 2],
    max_range: f64,
    targets: Vec<Target>,
}

impl RayCaster {
    pub fn new(world: &World, origin: [f64; 2], max_range: f64, time: f64) -> Self {
        let mut targets: Vec<Target> = world
            .segments
            .iter()
            .filter(|s| s.distance_to(origin) <= max_range)
            .map(|s| Target {
                a: s.a,
                b: s.b,
                reflectivity: s.reflectivity,
                velocity: None,
            })
            .collect();
        for m in &world.movers {
            let st = m.state_at(time);
            if point_segment_distance(origin, st.a, st.b) <= max_range {
                targets.push(Target {
                    a: st.a,
                    b: st.b,
                    reflectivity: m.reflectivity,
                    velocity: Some(st.velocity),
                });
            }
        }
        Self {
            origin,
            max_range,
            targets,
        }
    }

    pub fn cast(&self, angle: f64) -> Option<RayHit> {
        let dir = [angle.cos(), angle.sin()];
        let mut best: Option<(f64, &Target)> = None;
        for t in &self.targets {
            if let Some(r) = ray_segment(self.origin, dir, t.a, t.b) {
                if r <= self.max_range && best.map_or(true, |(b, _)| r < b) {
                    best = Some((r, t));
                }
            }
        }
        best.map(|(range, t)| RayHit {
            range,
            reflectivity: t.reflectivity,
            is_mover: t.velocity.is_some(),
            radial_velocity: t
                .velocity
                .map_or(0.0, |v| v[0] * dir[0] + v[1] * dir[1]),
        })
    }
}

/// Nearest intersection of a ray with the world at time `time`.
pub fn raycast(world: &World, origin: [f64; 2], angle: f64, max_range: f64, time: f64) -> Option<RayHit> {
    RayCaster::new(world, origin, max_range, time).cast(angle)
}

// ---------------------------------------------------------------------------
// Trajectories

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct OdometryNoise {
    pub translation_sigma: f64,
    pub rotation_sigma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimedPose {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

impl TimedPose {
    pub fn pose(&self) -> Pose2D {
        Pose2D::new(self.x, self.y, self.heading)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub poses: Vec<TimedPose>,
    pub odometry_noise: OdometryNoise,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn truncated(&self, n: usize) -> Trajectory {
        Trajectory {
            poses: self.poses.iter().take(n).copied().collect(),
            odometry_noise: self.odometry_noise,
        }
    }

    /// Poses as integrated from noisy relative motion, starting at the true first pose.
    pub fn dead_reckoned(&self, seed: u64) -> Vec<Pose2D> {
        let mut rng = rng::stream(seed, &[0x0D0]);
        let nt = Normal::new(0.0, self.odometry_noise.translation_sigma.max(0.0)).unwrap();
        let nr = Normal::new(0.0, self.odometry_noise.rotation_sigma.max(0.0)).unwrap();
        let mut out: Vec<Pose2D> = Vec::with_capacity(self.poses.len());
        for (k, tp) in self.poses.iter().enumerate() {
            if k == 0 {
                out.push(tp.pose());
                continue;
            }
            let delta = self.poses[k - 1].pose().between(&tp.pose());
            let noisy = Pose2D::new(
                delta.x + nt.sample(&mut rng),
                delta.y + nt.sample(&mut rng),
                delta.heading + nr.sample(&mut rng),
            );
            let prev = out[k - 1];
            out.push(prev.compose(&noisy));
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
        for p in &self.poses {
            w.serialize(p)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Trajectory> {
        let path = path.as_ref();
        let mut r = csv::Reader::from_reader(BufReader::new(File::open(path)?));
        let poses: Vec<TimedPose> = r.deserialize().collect::<std::result::Result<_, _>>()?;
        if poses.windows(2).any(|w| !(w[1].t > w[0].t)) {
            return Err(Error::format(path, "timestamps are not strictly increasing"));
        }
        Ok(Trajectory {
            poses,
            odometry_noise: OdometryNoise::default(),
        })
    }
}

/// Drives the ego lane from one end of the street to the other.
///
/// Poses are spaced `step` meters apart along the centerline with a gentle
/// lateral weave; the ego vehicle travels at 5 m/s.
pub fn generate_trajectory(world: &World, seed: u64, step: f64) -> Result<Trajectory> {
    if !(step > 0.1 && step <= 2.0) {
        return Err(Error::InvalidSpec(format!("step {step} outside (0.1, 2]")));
    }
    if world.route.len() < 2 {
        return Err(Error::NoPath("world has no street".into()));
    }
    let center = Polyline::new(world.route.clone());
    let margin = 10.0;
    if center.length < 2.0 * margin + step {
        return Err(Error::NoPath(format!("street of {:.1} m is too short", center.length)));
    }
    let mut rng = rng::stream(seed, &[world.seed, 0x7A1]);
    let amp = rng.random_range(0.0..0.4);
    let wavelength = rng.random_range(25.0..50.0);
    let phase = rng.random_range(0.0..2.0 * PI);
    let lateral = |s: f64| EGO_LANE_OFFSET + amp * (2.0 * PI * s / wavelength + phase).sin();
    let at = |s: f64| center.offset_point(s, lateral(s));

    let n = ((center.length - 2.0 * margin) / step).floor() as usize + 1;
    let mut poses = Vec::with_capacity(n);
    for k in 0..n {
        let s = margin + k as f64 * step;
        let p = at(s);
        let (ahead, behind) = (at(s + 0.1), at(s - 0.1));
        let heading = (ahead[1] - behind[1]).atan2(ahead[0] - behind[0]);
        let pose = Pose2D::new(p[0], p[1], heading);
        if let Some(seg) = world
            .segments
            .iter()
            .find(|seg| seg.distance_to(p) < MIN_CLEARANCE)
        {
            return Err(Error::NoPath(format!(
                "pose {k} at ({:.2}, {:.2}) is {:.2} m from a segment",
                p[0],
                p[1],
                seg.distance_to(p)
            )));
        }
        poses.push(TimedPose {
            t: s / EGO_SPEED,
            x: pose.x,
            y: pose.y,
            heading: pose.heading,
        });
    }
    Ok(Trajectory {
        poses,
        odometry_noise: OdometryNoise::default(),
    })
}

impl World {
    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let w = BufWriter::new(File::create(path)?);
        serde_json::to_writer(w, self)?;
        Ok(())
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<World> {
        let r = BufReader::new(File::open(path)?);
        Ok(serde_json::from_reader(r)?)
    }

    /// A world made only of the given segments.
    pub fn from_segments(segments: Vec<Segment>) -> World {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for p in segments.iter().flat_map(|s| [s.a, s.b]) {
            for k in 0..2 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        if segments.is_empty() {
            lo = [0.0; 2];
            hi = [0.0; 2];
        }
        World {
            seed: 0,
            bounds: Bounds { min: lo, max: hi },
            route: Vec::new(),
            segments,
            movers: Vec::new(),
        }
    }
}
