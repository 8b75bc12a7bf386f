//! Pipeline orchestration for learned inverse sensor models: simulation,
//! ground truth, datasets, training, stitching and evaluation.

pub mod error;
pub mod mapper;
pub mod pipeline;

pub use error::{GwError, GwResult};
