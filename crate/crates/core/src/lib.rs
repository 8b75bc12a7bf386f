//! Occupancy grids and the synthetic data pipeline that feeds the learned
//! inverse sensor models: a procedural 2D street world, LiDAR and radar
//! simulation, ideal-ISM ground truth and training-pair assembly.

pub mod dataset;
pub mod error;
pub mod grid;
pub mod gt;
pub mod rng;
pub mod sensor;
pub mod world;

pub use error::{Error, Result};
pub use grid::{CellClass, OccupancyGrid, Pose2D};
