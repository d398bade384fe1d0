//! Deep-supervision objective, Adam, multi-scale training and checkpoints.

mod adam;
mod checkpoint;
mod loss;
mod trainer;

pub use adam::{Adam, AdamConfig, AdamState};
pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, restore_into, save_checkpoint, RawCheckpoint};
pub use loss::{structure_loss, total_loss, weight_map, weighted_bce, weighted_iou, LossTerms, WEIGHT_GAIN, WEIGHT_WINDOW};
pub use trainer::{epoch_means, multiscale_step, scaled_extent, train, train_step, StepRecord, TrainConfig};
