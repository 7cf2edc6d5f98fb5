//! Encoder/decoder MLPs, Adam, and the training loop.

mod adam;
mod mlp;
mod train;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use mlp::{Architecture, BoundVae, MlpVae, ModelSpec};
pub use train::{data_space_mean, dataset_second_moment, evaluate_bound, reconstruction_rmse, train, train_model, MetricsLog, MetricsRow, TrainConfig};
