//! Compact residual CNN: architecture, training, inference, checkpoints.

mod checkpoint;
mod gradcheck;
pub mod layers;
mod model;
mod train;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use gradcheck::{gradient_check, GradCheckOptions, GradCheckReport, GradScope};
pub use model::{forward, Mode, ModelConfig, ParamEntry, TrainedModel, Variant};
pub use train::{loss_and_gradient, predict, predict_label, train, EpochLog, Optimizer, TrainConfig, TrainingLog};
