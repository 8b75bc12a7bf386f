use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use gridwise::error::{GwError, GwResult};
use gridwise::mapper::{stitch, InverseSensorModel};
use gridwise::pipeline::{self, DataContract, TrainSettings};
use gridwise_core::dataset::{load_dataset, split_save, DatasetMeta, DEFAULT_TAU};
use gridwise_core::grid::{read_grid, write_grid, write_pgm, write_png};
use gridwise_core::sensor::{read_scan, SensorConfig, SensorKind};
use gridwise_core::world::{generate_world, SceneMix, World};
use gridwise_nn::train::write_curve_csv;
use gridwise_nn::{save_model, Scheme};

/// Learned inverse sensor models for occupancy grid mapping.
///
/// Set GRIDWISE_THREADS to cap the number of worker threads.
#[derive(Debug, Parser)]
#[command(name = "gridwise", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Sensor {
    Lidar,
    Radar,
}

impl From<Sensor> for SensorKind {
    fn from(s: Sensor) -> Self {
        match s {
            Sensor::Lidar => SensorKind::Lidar,
            Sensor::Radar => SensorKind::Radar,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SchemeArg {
    InverseRatio,
    Independent,
}

impl From<SchemeArg> for Scheme {
    fn from(s: SchemeArg) -> Self {
        match s {
            SchemeArg::InverseRatio => Scheme::InverseRatio,
            SchemeArg::Independent => Scheme::Independent,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Pgm,
    Png,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a procedural street world.
    GenWorld {
        /// Seed of the world layout.
        #[arg(long)]
        seed: u64,
        /// Scene mix as JSON; defaults to the built-in mix.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Output directory; receives world.json.
        #[arg(long)]
        out: PathBuf,
    },
    /// Drive through a world and record scans.
    Simulate {
        /// Directory written by gen-world.
        #[arg(long)]
        world: PathBuf,
        /// Sensor to simulate.
        #[arg(long, value_enum)]
        sensor: Sensor,
        /// Seed of the trajectory; use the same value for every sensor of a world.
        #[arg(long)]
        traj_seed: u64,
        /// Seed of the sensor noise.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Maximum number of frames.
        #[arg(long)]
        frames: Option<usize>,
        /// Distance between poses in meters.
        #[arg(long, default_value_t = pipeline::DEFAULT_STEP)]
        step: f64,
        /// Output directory: run.json, trajectory.csv and scans/.
        #[arg(long)]
        out: PathBuf,
    },
    /// Accumulate a ground-truth map from a LiDAR drive.
    BuildGt {
        /// Directory written by simulate (LiDAR).
        #[arg(long)]
        scans: PathBuf,
        /// Cell size in meters.
        #[arg(long, default_value_t = pipeline::DESK_WINDOW / pipeline::DESK_SIDE as f64)]
        resolution: f64,
        /// Output grid file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Pair scans with ground-truth patches and split by world.
    MakeDataset {
        /// Drive directories; repeat once per world.
        #[arg(long, required = true)]
        scans: Vec<PathBuf>,
        /// Ground-truth maps, one per --scans, in the same order.
        #[arg(long, required = true)]
        gt: Vec<PathBuf>,
        /// Patch side in pixels: 64 or 128.
        #[arg(long, default_value_t = 64)]
        side: usize,
        /// Fraction of worlds used for training.
        #[arg(long, default_value_t = 0.8)]
        split: f64,
        /// Radial speed above which radar detections are dropped as moving.
        #[arg(long, default_value_t = pipeline::DEFAULT_V_THRESH)]
        v_thresh: f64,
        /// Trinarization threshold on log-odds.
        #[arg(long, default_value_t = DEFAULT_TAU)]
        tau: f64,
        /// Output dataset directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train an inverse sensor model.
    Train {
        /// Directory written by make-dataset.
        #[arg(long)]
        dataset: PathBuf,
        /// Class weighting of the loss.
        #[arg(long, value_enum)]
        scheme: SchemeArg,
        /// Training settings as JSON; flags below override it.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Number of epochs.
        #[arg(long)]
        epochs: Option<usize>,
        /// Minibatch size (at least 2).
        #[arg(long)]
        batch_size: Option<usize>,
        /// Adam learning rate.
        #[arg(long)]
        lr: Option<f64>,
        /// Seed of initialization, shuffling and augmentation.
        #[arg(long)]
        seed: Option<u64>,
        /// Per-epoch loss log; defaults to the model path with `.log.csv`.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Output model file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Predict a log-odds patch for one scan.
    Predict {
        /// Model file written by train.
        #[arg(long)]
        model: PathBuf,
        /// Scan CSV (with its JSON sidecar).
        #[arg(long)]
        scan: PathBuf,
        /// Output log-odds patch (grid file).
        #[arg(long)]
        out: PathBuf,
    },
    /// Predict every frame of a drive and fuse into a world map.
    Stitch {
        /// Model file written by train.
        #[arg(long)]
        model: PathBuf,
        /// Directory written by simulate.
        #[arg(long)]
        scans: PathBuf,
        /// Output map (grid file).
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a model on the test split of a dataset.
    Eval {
        /// Model file written by train.
        #[arg(long)]
        model: PathBuf,
        /// Directory written by make-dataset; its test split is scored.
        #[arg(long)]
        dataset: PathBuf,
        /// Held-out drives to stitch for map IoU; repeat, paired with --gt.
        #[arg(long)]
        scans: Vec<PathBuf>,
        /// Ground-truth maps, one per --scans.
        #[arg(long)]
        gt: Vec<PathBuf>,
        /// Output metrics JSON.
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a grid as an 8-bit image (north up).
    Export {
        /// Grid file to render.
        #[arg(long)]
        grid: PathBuf,
        /// Image format.
        #[arg(long, value_enum)]
        format: Format,
        /// Output image.
        #[arg(long)]
        out: PathBuf,
    },
}

const WORLD_FILE: &str = "world.json";

fn world_path(dir: &std::path::Path) -> PathBuf {
    if dir.is_dir() {
        dir.join(WORLD_FILE)
    } else {
        dir.to_path_buf()
    }
}

fn ensure_parent(path: &std::path::Path) -> GwResult<()> {
    if let Some(p) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(p)?;
    }
    Ok(())
}

fn run(cli: Cli) -> GwResult<()> {
    match cli.command {
        Command::GenWorld { seed, spec, out } => {
            let mix: SceneMix = match spec {
                Some(p) => serde_json::from_slice(&fs::read(p)?)?,
                None => SceneMix::default(),
            };
            let world = generate_world(seed, &mix)?;
            fs::create_dir_all(&out)?;
            world.write_json(out.join(WORLD_FILE))?;
        }
        Command::Simulate {
            world,
            sensor,
            traj_seed,
            seed,
            frames,
            step,
            out,
        } => {
            if !(step > 0.0) {
                return Err(GwError::BadArgs("--step must be positive".into()));
            }
            let world = World::read_json(world_path(&world))?;
            let cfg = SensorConfig::default_for(sensor.into());
            let run = pipeline::simulate_run(&world, cfg, traj_seed, seed, frames, step)?;
            pipeline::write_run(&run, &out)?;
        }
        Command::BuildGt { scans, resolution, out } => {
            if !(resolution > 0.0) {
                return Err(GwError::BadArgs("--resolution must be positive".into()));
            }
            let run = pipeline::read_run(&scans)?;
            let map = pipeline::ground_truth(&run, resolution)?;
            ensure_parent(&out)?;
            write_grid(&map, &out)?;
        }
        Command::MakeDataset {
            scans,
            gt,
            side,
            split,
            v_thresh,
            tau,
            out,
        } => {
            pipeline::check_side(side)?;
            if scans.len() != gt.len() {
                return Err(GwError::BadArgs(format!(
                    "{} --scans but {} --gt; give one map per drive",
                    scans.len(),
                    gt.len()
                )));
            }
            let mut pairs = Vec::new();
            let mut meta: Option<DatasetMeta> = None;
            for (s, g) in scans.iter().zip(&gt) {
                let run = pipeline::read_run(s)?;
                let map = read_grid(g)?;
                let m = DatasetMeta {
                    sensor: run.sensor_kind(),
                    side,
                    resolution: map.resolution(),
                    tau,
                };
                match &meta {
                    Some(prev) if *prev != m => {
                        return Err(gridwise_core::Error::InvalidSpec(format!(
                            "{} does not match the other drives ({m:?} vs {prev:?})",
                            s.display()
                        ))
                        .into())
                    }
                    _ => meta = Some(m),
                }
                pairs.extend(pipeline::pairs_for(&run, &map, side, v_thresh, tau)?);
            }
            split_save(&pairs, split, &meta.expect("at least one drive"), &out)?;
        }
        Command::Train {
            dataset,
            scheme,
            config,
            epochs,
            batch_size,
            lr,
            seed,
            log,
            out,
        } => {
            let mut settings: TrainSettings = match config {
                Some(p) => serde_json::from_slice(&fs::read(p)?)?,
                None => TrainSettings::default(),
            };
            if let Some(v) = epochs {
                settings.train.epochs = v;
            }
            if let Some(v) = batch_size {
                settings.train.batch_size = v;
            }
            if let Some(v) = lr {
                settings.train.learning_rate = v;
            }
            if let Some(v) = seed {
                settings.train.seed = v;
            }
            settings
                .train
                .validate()
                .map_err(|e| GwError::BadArgs(e.to_string()))?;
            let ds = load_dataset(&dataset)?;
            let meta = ds.meta();
            let contract = DataContract {
                sensor: meta.sensor,
                side: meta.side,
                resolution: meta.resolution,
                tau: meta.tau,
                v_thresh: pipeline::DEFAULT_V_THRESH,
            };
            let (ism, outcome) = pipeline::train_model(&ds.train, &contract, scheme.into(), &settings)?;
            ensure_parent(&out)?;
            save_model(&ism.model, &ism.card, &out)?;
            let log = log.unwrap_or_else(|| {
                let mut p = out.clone().into_os_string();
                p.push(".log.csv");
                p.into()
            });
            write_curve_csv(&outcome.curve, log)?;
            outcome.check()?;
        }
        Command::Predict { model, scan, out } => {
            let ism = InverseSensorModel::load(&model)?;
            let patch = ism.predict_patch(&read_scan(&scan)?)?;
            ensure_parent(&out)?;
            write_grid(&patch, &out)?;
        }
        Command::Stitch { model, scans, out } => {
            let ism = InverseSensorModel::load(&model)?;
            let run = pipeline::read_run(&scans)?;
            let spec = pipeline::map_spec(&run.info.bounds, ism.card.resolution);
            let map = stitch(&ism, &run.scans, &run.trajectory, &spec)?;
            ensure_parent(&out)?;
            write_grid(&map, &out)?;
        }
        Command::Eval {
            model,
            dataset,
            scans,
            gt,
            out,
        } => {
            if scans.len() != gt.len() {
                return Err(GwError::BadArgs("give one --gt per --scans".into()));
            }
            let ism = InverseSensorModel::load(&model)?;
            let ds = load_dataset(&dataset)?;
            if Some(ds.manifest.sensor) != ism.card.sensor || ds.manifest.side != ism.card.side {
                return Err(GwError::SensorKindMismatch {
                    trained: format!("{:?} side {}", ism.card.sensor, ism.card.side),
                    actual: format!("{} side {}", ds.manifest.sensor, ds.manifest.side),
                });
            }
            let drives = scans
                .iter()
                .zip(&gt)
                .map(|(s, g)| Ok((pipeline::read_run(s)?, read_grid(g)?)))
                .collect::<GwResult<Vec<_>>>()?;
            let metrics = pipeline::evaluate(&ism, &ds.test, &drives)?;
            ensure_parent(&out)?;
            fs::write(&out, serde_json::to_string_pretty(&metrics)? + "\n")?;
        }
        Command::Export { grid, format, out } => {
            let g = read_grid(&grid)?;
            ensure_parent(&out)?;
            match format {
                Format::Pgm => write_pgm(&g, &out)?,
                Format::Png => write_png(&g, &out)?,
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = std::env::var("GRIDWISE_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        // Only fails if a pool already exists, which cannot happen this early.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
