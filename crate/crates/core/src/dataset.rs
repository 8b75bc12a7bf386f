//! Training pairs: rasterized sensor input next to a ground-truth label patch.
//!
//! Inputs are `{0,1}` images mapped to `{-1,+1}`; labels are occupancy
//! probabilities mapped to `y = 2p - 1`. Class membership (free, unknown,
//! occupied) comes from thresholding the label's log-odds at `±tau`.

use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{logit_to_prob, CellClass, OccupancyGrid, Pose2D};
use crate::sensor::{filter_moving, rasterize, Scan, SensorKind};
use crate::world::Trajectory;

/// Default trinarization threshold, `logit(0.75)`.
pub const DEFAULT_TAU: f64 = 1.0986122886681098;

const MANIFEST: &str = "manifest.json";
const BLOB: &str = "samples.f32";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ClassCounts {
    pub free: usize,
    pub unknown: usize,
    pub occupied: usize,
    pub total: usize,
}

impl ClassCounts {
    pub fn from_classes(classes: &[CellClass]) -> Self {
        let mut c = ClassCounts {
            total: classes.len(),
            ..Default::default()
        };
        for k in classes {
            match k {
                CellClass::Free => c.free += 1,
                CellClass::Unknown => c.unknown += 1,
                CellClass::Occupied => c.occupied += 1,
            }
        }
        c
    }

    pub fn get(&self, class: CellClass) -> usize {
        match class {
            CellClass::Free => self.free,
            CellClass::Unknown => self.unknown,
            CellClass::Occupied => self.occupied,
        }
    }

    pub fn is_consistent(&self) -> bool {
        self.free + self.unknown + self.occupied == self.total
    }

    pub fn add(&mut self, other: &ClassCounts) {
        self.free += other.free;
        self.unknown += other.unknown;
        self.occupied += other.occupied;
        self.total += other.total;
    }
}

/// Class of a label value `y = 2p - 1`; equivalent to trinarizing its log-odds.
#[inline]
pub fn label_class(y: f32, tau: f64) -> CellClass {
    let t = (tau / 2.0).tanh();
    let y = y as f64;
    if y > t {
        CellClass::Occupied
    } else if y < -t {
        CellClass::Free
    } else {
        CellClass::Unknown
    }
}

pub fn label_classes(label: &[f32], tau: f64) -> Vec<CellClass> {
    label.iter().map(|&y| label_class(y, tau)).collect()
}

/// Label image from a log-odds patch, in the same pixel layout as the input raster.
pub fn label_from_patch(patch: &OccupancyGrid) -> Vec<f32> {
    patch
        .to_image_rows()
        .into_iter()
        .map(|l| (2.0 * logit_to_prob(l) - 1.0) as f32)
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchPair {
    pub side: usize,
    /// `{-1, +1}` input image, row-major.
    pub input: Vec<f32>,
    /// `[-1, 1]` label image, row-major.
    pub label: Vec<f32>,
    pub pose: Pose2D,
    pub counts: ClassCounts,
    pub world_seed: u64,
    pub frame: usize,
}

impl PatchPair {
    pub fn classes(&self, tau: f64) -> Vec<CellClass> {
        label_classes(&self.label, tau)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairConfig {
    pub side: usize,
    pub window: f64,
    /// Radial speed above which radar detections are treated as moving.
    pub v_thresh: f64,
    pub tau: f64,
    pub world_seed: u64,
}

impl PairConfig {
    pub fn resolution(&self) -> f64 {
        self.window / self.side as f64
    }
}

/// Network input for one scan: radar returns are motion-filtered first, then
/// the raster is mapped to `{-1, +1}`.
pub fn input_image(scan: &Scan, side: usize, window: f64, v_thresh: f64) -> Vec<f32> {
    match scan.sensor_kind {
        SensorKind::Radar => rasterize(&filter_moving(scan, v_thresh), side, window).normalized(),
        SensorKind::Lidar => rasterize(scan, side, window).normalized(),
    }
}

/// Pairs scan `k` (motion-filtered, rasterized) with the label patch cut at pose `k`.
pub fn make_pairs(
    scans: &[Scan],
    label_patches: &[(usize, OccupancyGrid)],
    trajectory: &Trajectory,
    cfg: &PairConfig,
) -> Result<Vec<PatchPair>> {
    crate::gt::check_aligned(scans, trajectory)?;
    let mut out = Vec::with_capacity(label_patches.len());
    for (k, patch) in label_patches {
        let scan = scans.get(*k).ok_or(Error::LengthMismatch {
            what: "label index vs scans",
            left: *k,
            right: scans.len(),
        })?;
        if patch.width() != cfg.side
            || patch.height() != cfg.side
            || (patch.resolution() - cfg.resolution()).abs() > 1e-9
        {
            return Err(Error::GeometryMismatch(format!(
                "label patch {}x{} @ {} vs input {}x{} @ {}",
                patch.width(),
                patch.height(),
                patch.resolution(),
                cfg.side,
                cfg.side,
                cfg.resolution()
            )));
        }
        let input = input_image(scan, cfg.side, cfg.window, cfg.v_thresh);
        let label = label_from_patch(patch);
        let counts = ClassCounts::from_classes(&label_classes(&label, cfg.tau));
        out.push(PatchPair {
            side: cfg.side,
            input,
            label,
            pose: trajectory.poses[*k].pose(),
            counts,
            world_seed: cfg.world_seed,
            frame: *k,
        });
    }
    Ok(out)
}

/// Element of the symmetry group of the square: `rot` quarter turns
/// counter-clockwise, then optional left-right and top-bottom mirrors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct D4 {
    pub rot: u8,
    pub flip_h: bool,
    pub flip_v: bool,
}

impl D4 {
    pub const IDENTITY: D4 = D4 {
        rot: 0,
        flip_h: false,
        flip_v: false,
    };

    pub fn random(rng: &mut impl rand::Rng) -> D4 {
        D4 {
            rot: rng.random_range(0..4),
            flip_h: rng.random(),
            flip_v: rng.random(),
        }
    }

    /// All 16 parameter combinations (8 distinct group elements).
    pub fn all() -> impl Iterator<Item = D4> {
        (0..16u8).map(|i| D4 {
            rot: i & 3,
            flip_h: i & 4 != 0,
            flip_v: i & 8 != 0,
        })
    }

    pub fn apply<T: Copy>(&self, img: &[T], side: usize) -> Vec<T> {
        assert_eq!(img.len(), side * side, "augmentation needs a square image");
        let n = side;
        let mut cur = img.to_vec();
        for _ in 0..self.rot % 4 {
            let mut next = cur.clone();
            for r in 0..n {
                for c in 0..n {
                    next[r * n + c] = cur[c * n + (n - 1 - r)];
                }
            }
            cur = next;
        }
        if self.flip_h {
            for row in cur.chunks_mut(n) {
                row.reverse();
            }
        }
        if self.flip_v {
            let mut next = cur.clone();
            for r in 0..n {
                next[r * n..(r + 1) * n].copy_from_slice(&cur[(n - 1 - r) * n..(n - r) * n]);
            }
            cur = next;
        }
        cur
    }

    /// The same transform acting on vehicle-frame points.
    pub fn apply_point(&self, p: [f64; 2]) -> [f64; 2] {
        let mut q = p;
        for _ in 0..self.rot % 4 {
            q = [-q[1], q[0]];
        }
        if self.flip_h {
            q[0] = -q[0];
        }
        if self.flip_v {
            q[1] = -q[1];
        }
        q
    }
}

/// Applies one random symmetry to input and label alike.
pub fn augment(pair: &PatchPair, rng: &mut impl rand::Rng) -> PatchPair {
    augment_with(pair, D4::random(rng))
}

pub fn augment_with(pair: &PatchPair, g: D4) -> PatchPair {
    PatchPair {
        input: g.apply(&pair.input, pair.side),
        label: g.apply(&pair.label, pair.side),
        ..pair.clone()
    }
}

// ---------------------------------------------------------------------------
// Persistence

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleEntry {
    pub world_seed: u64,
    pub frame: usize,
    pub pose: Pose2D,
    pub counts: ClassCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub tag: String,
    pub blob: String,
    pub seeds: Vec<u64>,
    pub samples: Vec<SampleEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub sensor: SensorKind,
    pub side: usize,
    pub resolution: f64,
    pub tau: f64,
    pub train: SplitManifest,
    pub test: SplitManifest,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub sensor: SensorKind,
    pub side: usize,
    pub resolution: f64,
    pub tau: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: Manifest,
    pub train: Vec<PatchPair>,
    pub test: Vec<PatchPair>,
}

impl Dataset {
    pub fn meta(&self) -> DatasetMeta {
        DatasetMeta {
            sensor: self.manifest.sensor,
            side: self.manifest.side,
            resolution: self.manifest.resolution,
            tau: self.manifest.tau,
        }
    }
}

/// Splits pairs by world seed (the first `round(fraction * n_seeds)` seeds in
/// ascending order train, the rest test) and writes the dataset directory.
pub fn split_save(pairs: &[PatchPair], train_fraction: f64, meta: &DatasetMeta, dir: impl AsRef<Path>) -> Result<Manifest> {
    let dir = dir.as_ref();
    let seeds: Vec<u64> = pairs
        .iter()
        .map(|p| p.world_seed)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if !(0.0..=1.0).contains(&train_fraction) {
        return Err(Error::DegenerateSplit(format!("fraction {train_fraction}")));
    }
    let n_train = (train_fraction * seeds.len() as f64).round() as usize;
    if n_train == 0 || n_train >= seeds.len() {
        return Err(Error::DegenerateSplit(format!(
            "{} of {} world seeds for training leaves a split empty",
            n_train,
            seeds.len()
        )));
    }
    if pairs.iter().any(|p| p.side != meta.side) {
        return Err(Error::GeometryMismatch("pair side differs from dataset side".into()));
    }
    let train_seeds: BTreeSet<u64> = seeds[..n_train].iter().copied().collect();
    let (train, test): (Vec<&PatchPair>, Vec<&PatchPair>) =
        pairs.iter().partition(|p| train_seeds.contains(&p.world_seed));

    fs::create_dir_all(dir)?;
    let write_split = |tag: &str, members: &[&PatchPair], seeds: Vec<u64>| -> Result<SplitManifest> {
        let sub = dir.join(tag);
        fs::create_dir_all(&sub)?;
        let mut w = BufWriter::new(File::create(sub.join(BLOB))?);
        for p in members {
            for v in p.input.iter().chain(&p.label) {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(SplitManifest {
            tag: tag.to_string(),
            blob: format!("{tag}/{BLOB}"),
            seeds,
            samples: members
                .iter()
                .map(|p| SampleEntry {
                    world_seed: p.world_seed,
                    frame: p.frame,
                    pose: p.pose,
                    counts: p.counts,
                })
                .collect(),
        })
    };
    let train_m = write_split("train", &train, seeds[..n_train].to_vec())?;
    let test_m = write_split("test", &test, seeds[n_train..].to_vec())?;
    let manifest = Manifest {
        version: FORMAT_VERSION,
        sensor: meta.sensor,
        side: meta.side,
        resolution: meta.resolution,
        tau: meta.tau,
        train: train_m,
        test: test_m,
    };
    serde_json::to_writer_pretty(BufWriter::new(File::create(dir.join(MANIFEST))?), &manifest)?;
    Ok(manifest)
}

pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let mpath = dir.join(MANIFEST);
    let manifest: Manifest = serde_json::from_reader(BufReader::new(File::open(&mpath)?))?;
    if manifest.version != FORMAT_VERSION {
        return Err(Error::format(&mpath, format!("unsupported version {}", manifest.version)));
    }
    let train = load_split(dir, &manifest, &manifest.train)?;
    let test = load_split(dir, &manifest, &manifest.test)?;
    let train_seeds: BTreeSet<_> = manifest.train.seeds.iter().collect();
    if manifest.test.seeds.iter().any(|s| train_seeds.contains(s)) {
        return Err(Error::format(&mpath, "train and test share a world seed"));
    }
    Ok(Dataset { manifest, train, test })
}

fn load_split(dir: &Path, m: &Manifest, split: &SplitManifest) -> Result<Vec<PatchPair>> {
    let path = dir.join(&split.blob);
    let mut bytes = Vec::new();
    BufReader::new(File::open(&path)?).read_to_end(&mut bytes)?;
    let px = m.side * m.side;
    let expect = split.samples.len() * 2 * px * 4;
    if bytes.len() != expect {
        return Err(Error::format(&path, format!("expected {expect} bytes, found {}", bytes.len())));
    }
    let values: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    let seeds: BTreeSet<_> = split.seeds.iter().collect();
    split
        .samples
        .iter()
        .zip(values.chunks_exact(2 * px))
        .map(|(e, v)| {
            if !seeds.contains(&e.world_seed) {
                return Err(Error::format(&path, format!("sample from seed {} outside split", e.world_seed)));
            }
            let label = v[px..].to_vec();
            let counts = ClassCounts::from_classes(&label_classes(&label, m.tau));
            if counts != e.counts {
                return Err(Error::format(&path, "class counts disagree with labels"));
            }
            Ok(PatchPair {
                side: m.side,
                input: v[..px].to_vec(),
                label,
                pose: e.pose,
                counts,
                world_seed: e.world_seed,
                frame: e.frame,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests;
