//! Loss, regularization, Adam, the training loop and checkpoints.

mod adam;
mod checkpoint;
mod loss;
mod trainer;

pub use adam::AdamState;
pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, FORMAT_VERSION, MAGIC,
};
pub use loss::{cross_entropy, cross_entropy_loss, one_hot, regularization_penalty, PROB_FLOOR};
pub use trainer::{
    evaluate_loss, loss_history_csv, predict_images, prepare_split, train_fusion_model, EpochLoss, TrainConfig,
    TrainReport, Trainer,
};
