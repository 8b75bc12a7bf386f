//! Convolutional autoencoder for learned inverse sensor models: layers with
//! hand-written backward passes, the class-weighted reconstruction loss, and
//! an Adam training loop.

pub mod error;
pub mod gradcheck;
pub mod io;
pub mod layers;
pub mod loss;
pub mod model;
pub mod real;
pub mod tensor;
pub mod train;

pub use error::{NnError, NnResult};
pub use io::{load_model, save_model, ModelCard};
pub use loss::{LossConfig, Scheme};
pub use model::{head_to_prob, AeModel, Mode, ModelConfig};
pub use real::Real;
pub use tensor::Tensor;
pub use train::{train, EpochStats, TrainConfig, TrainOutcome};
